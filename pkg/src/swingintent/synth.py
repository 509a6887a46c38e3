"""Synthetic worlds with known ground truth."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from . import runexp, skewnorm
from .causal import CausalFit, CausalSuite
from .gbm import clip_probability, hit_coordinates
from .hiermodel.model import N_RE, IntentionData
from .ingest import PITCH_FEATURES, IntentionObservation

COUNTS = tuple((b, s) for b in range(4) for s in range(3))


@dataclass(frozen=True)
class IntentionTruth:
    """Generating parameters of the intention model (mean parameterization)."""

    mu0: float = 72.0
    beta: tuple = (0.5, -1.0, -0.5, -1.8)  # balls, strikes, loc_x, loc_z
    alpha0: float = -2.0
    sigma: float = 5.0
    sd_p: float = 0.5
    sd_b: tuple = (3.0, 0.45, 1.0, 1.0)
    corr: tuple | None = None  # 4x4 nested tuple; identity when None
    tau: float = 0.5

    def covariance(self) -> np.ndarray:
        R = np.eye(N_RE) if self.corr is None else np.asarray(self.corr, dtype=float)
        sd = np.asarray(self.sd_b, dtype=float)
        return sd[:, None] * R * sd[None, :]


# swing-length flavoured defaults, feet
SWING_LENGTH_TRUTH = IntentionTruth(
    mu0=7.6, beta=(0.05, -0.14, 0.16, -0.46), alpha0=-1.5, sigma=0.9,
    sd_p=0.12, sd_b=(0.43, 0.05, 0.11, 0.13), tau=0.34,
)


@dataclass(frozen=True)
class IntentionWorld:
    truth: IntentionTruth = IntentionTruth()
    n_batters: int = 50
    n_pitchers: int = 40
    swings_per_batter: int = 100
    loc_x_sd: float = 0.6
    loc_z_mean: float = 2.5
    loc_z_sd: float = 0.5
    seed: int = 0


@dataclass
class IntentionSample:
    observations: list
    data: IntentionData
    truth: dict = field(default_factory=dict)


def draw_effects(truth: IntentionTruth, n_batters: int, n_pitchers: int, rng):
    cov = truth.covariance()
    if np.any(np.asarray(truth.sd_b) > 0):
        # factor via eigh so zero sds are allowed
        w, V = np.linalg.eigh(cov)
        chol = V * np.sqrt(np.clip(w, 0, None))
        gamma_b = rng.standard_normal((n_batters, N_RE)) @ chol.T
    else:
        gamma_b = np.zeros((n_batters, N_RE))
    gamma_p = truth.sd_p * rng.standard_normal(n_pitchers)
    nu = truth.tau * rng.standard_normal(n_batters)
    return gamma_b, gamma_p, nu


def intention_mean(truth: IntentionTruth, gamma_b, gamma_p, X, b, p):
    slopes = np.asarray(truth.beta)[None, :] + np.column_stack([np.zeros(len(b)), gamma_b[b, 1:]])
    return truth.mu0 + gamma_p[p] + gamma_b[b, 0] + np.sum(slopes * X, axis=1)


def gen_intention_data(world: IntentionWorld = IntentionWorld()) -> IntentionSample:
    """Simulate intention-model data and return it with the latent truth.

    Counts are uniform over the 12 ball-strike counts; batter-relative
    locations are independent Gaussians; every batter gets the same number of
    swings against uniformly drawn pitchers.
    """
    rng = np.random.default_rng(world.seed)
    t = world.truth
    gamma_b, gamma_p, nu = draw_effects(t, world.n_batters, world.n_pitchers, rng)
    n = world.n_batters * world.swings_per_batter
    b = np.repeat(np.arange(world.n_batters), world.swings_per_batter)
    p = rng.integers(0, world.n_pitchers, size=n)
    cnt = rng.integers(0, len(COUNTS), size=n)
    balls = np.array([COUNTS[c][0] for c in cnt], dtype=float)
    strikes = np.array([COUNTS[c][1] for c in cnt], dtype=float)
    loc_x = world.loc_x_sd * rng.standard_normal(n)
    loc_z = world.loc_z_mean + world.loc_z_sd * rng.standard_normal(n)
    X = np.column_stack([balls, strikes, loc_x, loc_z])
    mu = intention_mean(t, gamma_b, gamma_p, X, b, p)
    alpha = t.alpha0 + nu[b]
    xi = skewnorm.mean_to_location(mu, t.sigma, alpha)
    d = skewnorm.delta(alpha)
    y = xi + t.sigma * (d * np.abs(rng.standard_normal(n)) + np.sqrt(1 - d**2) * rng.standard_normal(n))

    batter_ids = tuple(f"b{j:04d}" for j in range(world.n_batters))
    pitcher_ids = tuple(f"p{j:04d}" for j in range(world.n_pitchers))
    obs = [
        IntentionObservation(
            batter_id=batter_ids[b[i]], pitcher_id=pitcher_ids[p[i]], response=float(y[i]),
            balls=int(balls[i]), strikes=int(strikes[i]), loc_x=float(loc_x[i]), loc_z=float(loc_z[i]),
        )
        for i in range(n)
    ]
    data = IntentionData(
        y=y, balls=balls, strikes=strikes, loc_x=loc_x, loc_z=loc_z,
        batter=b.astype(np.int64), pitcher=p.astype(np.int64),
        batter_ids=batter_ids, pitcher_ids=pitcher_ids,
    )
    truth = {"gamma_b": gamma_b, "gamma_p": gamma_p, "nu": nu, "mu": mu, "alpha": alpha, "params": t}
    return IntentionSample(obs, data, truth)


def intention_variance(world: IntentionWorld, n_quad: int = 80) -> float:
    """Marginal response variance implied by the generator.

    Law of total variance: Var(fixed part) + tr(Sigma E[w w']) + sd_p^2 +
    E_nu[skew-normal variance], the last by Gauss-Hermite quadrature.
    """
    t = world.truth
    beta = np.asarray(t.beta)
    # balls/strikes uniform over the 12 counts
    cnt = np.asarray(COUNTS, dtype=float)
    var_bs = np.cov(cnt.T, bias=True)
    m_bs = cnt.mean(axis=0)
    var_fixed = beta[:2] @ var_bs @ beta[:2] + beta[2] ** 2 * world.loc_x_sd**2 + beta[3] ** 2 * world.loc_z_sd**2
    # E[w w'] for w = (1, strikes, loc_x, loc_z)
    Eww = np.zeros((4, 4))
    mean_w = np.array([1.0, m_bs[1], 0.0, world.loc_z_mean])
    var_w = np.diag([0.0, var_bs[1, 1], world.loc_x_sd**2, world.loc_z_sd**2])
    Eww = var_w + np.outer(mean_w, mean_w)
    var_batter = np.trace(t.covariance() @ Eww)
    x, w = np.polynomial.hermite_e.hermegauss(n_quad)
    alpha = t.alpha0 + t.tau * x
    d = skewnorm.delta(alpha)
    sn_var = np.sum(w * t.sigma**2 * (1 - 2 * d**2 / np.pi)) / np.sqrt(2 * np.pi)
    return float(var_fixed + var_batter + t.sd_p**2 + sn_var)


# --- play-by-play ----------------------------------------------------------------


def advance(state, outcome):
    """Deterministic base running for the closed outcome table.

    Returns ``(post_state, runs, stranded)``.  Walks and HBP force runners;
    a single moves every runner one base, a double two; triples and home runs
    clear the bases.
    """
    O = runexp.PAOutcome
    f, s, t = state.first, state.second, state.third
    if outcome in (O.Strikeout, O.OutInPlay):
        if state.outs == 2:
            return runexp.TERMINAL, 0, state.runners
        return runexp.BaseOutState(state.outs + 1, f, s, t), 0, 0
    if outcome in (O.Walk, O.HitByPitch):
        runs = int(f and s and t)
        return runexp.BaseOutState(state.outs, True, f or s, (f and s) or t), runs, 0
    if outcome is O.Single:
        return runexp.BaseOutState(state.outs, True, f, s), int(t), 0
    if outcome is O.Double:
        return runexp.BaseOutState(state.outs, False, True, f), int(s) + int(t), 0
    if outcome is O.Triple:
        return runexp.BaseOutState(state.outs, False, False, True), state.runners, 0
    if outcome is O.HomeRun:
        return runexp.BaseOutState(state.outs), state.runners + 1, 0
    raise ValueError(f"outcome {outcome} not in the closed table")


@dataclass(frozen=True)
class PlayByPlaySpec:
    """League with i.i.d. plate-appearance outcomes.

    ``probs`` maps outcome names to probabilities summing to 1; at least one
    out-making outcome must have positive probability.
    """

    probs: tuple = (("HomeRun", 0.005), ("Strikeout", 0.995))
    n_innings: int = 100_000
    seed: int = 0

    def table(self) -> dict:
        d = {runexp.PAOutcome(k): float(v) for k, v in self.probs}
        if abs(sum(d.values()) - 1.0) > 1e-12 or min(d.values()) < 0:
            raise ValueError("outcome probabilities must be non-negative and sum to 1")
        if d.get(runexp.PAOutcome.Strikeout, 0) + d.get(runexp.PAOutcome.OutInPlay, 0) <= 0:
            raise ValueError("innings never end without an out-making outcome")
        return d


def gen_playbyplay(spec: PlayByPlaySpec = PlayByPlaySpec()) -> list:
    """Simulate complete innings as a list of :class:`runexp.PlayEvent`."""
    table = spec.table()
    outcomes = list(table)
    p = np.array([table[o] for o in outcomes])
    rng = np.random.default_rng(spec.seed)
    events = []
    width = len(str(spec.n_innings - 1))
    for i in range(spec.n_innings):
        iid = f"i{i:0{width}d}"
        state, seq = runexp.EMPTY, 0
        while not state.is_terminal:
            o = outcomes[rng.choice(len(outcomes), p=p)]
            post, runs, stranded = advance(state, o)
            events.append(runexp.PlayEvent(iid, seq, state, post, runs, o, f"{iid}-{seq}", stranded))
            state, seq = post, seq + 1
    return events


def table_run_expectancy(probs) -> tuple:
    """Exact RE24 and linear weights of a closed outcome table.

    Solves ``V = r + P V`` over the 24 states.  Linear weights average the
    one-step run value over expected visits per inning from (empty, 0 outs).

    Returns
    -------
    re : dict
        State -> expected runs (reachable states only).
    lw : dict
        Outcome -> linear weight.
    """
    table = PlayByPlaySpec(tuple((getattr(k, "value", k), v) for k, v in dict(probs).items())).table()
    states = runexp.all_states()
    index = {s: i for i, s in enumerate(states)}
    n = len(states)
    P, r = np.zeros((n, n)), np.zeros(n)
    for s in states:
        for o, po in table.items():
            post, runs, _ = advance(s, o)
            r[index[s]] += po * runs
            if not post.is_terminal:
                P[index[s], index[post]] += po
    V = np.linalg.solve(np.eye(n) - P, r)
    visits = np.linalg.solve((np.eye(n) - P).T, np.eye(n)[index[runexp.EMPTY]])
    reachable = visits > 1e-15
    re = {s: float(V[index[s]]) for s in states if reachable[index[s]]}
    lw = {}
    for o, po in table.items():
        if po == 0:
            continue
        num = den = 0.0
        for s in states:
            w = visits[index[s]] * po
            post, runs, _ = advance(s, o)
            v_post = 0.0 if post.is_terminal else V[index[post]]
            num += w * (runs + v_post - V[index[s]])
            den += w
        lw[o] = num / den
    return re, lw


# --- pitch pools, stub outcome models and swing outcomes ---------------------------


@dataclass(frozen=True)
class StubComponent:
    """``link(intercept + linear . x + quadratic . x^2)``, or a constant when
    ``constant`` is set (returned exactly, so 0 and 1 are allowed)."""

    intercept: float = 0.0
    linear: tuple = ()
    quadratic: tuple = ()
    constant: float | None = None

    def __call__(self, X, logistic: bool = True) -> np.ndarray:
        if self.constant is not None:
            return np.full(X.shape[0], float(self.constant))
        z = np.full(X.shape[0], self.intercept)
        if self.linear:
            z = z + X @ np.asarray(self.linear, dtype=float)
        if self.quadratic:
            z = z + (X**2) @ np.asarray(self.quadratic, dtype=float)
        return expit(z) if logistic else z


@dataclass(frozen=True)
class StubOutcomeModels:
    """Closed-form stand-ins for the six pitch-outcome components."""

    A: StubComponent
    B: StubComponent
    C: StubComponent
    D: StubComponent
    E: StubComponent
    F: StubComponent

    @classmethod
    def constant(cls, A, B, C, D, E, F) -> "StubOutcomeModels":
        return cls(*(StubComponent(constant=v) for v in (A, B, C, D, E, F)))

    def components(self, X) -> dict:
        X = np.asarray(X, dtype=float)
        return {
            "p_swing": self.A(X), "p_hbp": self.B(X), "p_con": self.C(X),
            "p_strike": self.D(X), "p_fair": self.E(X), "xlw": self.F(X, logistic=False),
        }


def _w(**named) -> tuple:
    w = np.zeros(len(PITCH_FEATURES))
    for k, v in named.items():
        w[PITCH_FEATURES.index(k)] = v
    return tuple(w.tolist())


# plausible league: quadratic bowls centred on the middle of the zone
# (plate_x = 0, plate_z = 2.5); swings also rise with strikes
DEFAULT_STUBS = StubOutcomeModels(
    A=StubComponent(-6.15, _w(strikes=0.5, balls=-0.1, plate_z=6.0), _w(plate_x=-1.6, plate_z=-1.2)),
    B=StubComponent(-4.5, (), _w(plate_x=0.6)),
    C=StubComponent(-0.925, _w(plate_z=2.5), _w(plate_x=-0.8, plate_z=-0.5)),
    D=StubComponent(-8.5, _w(plate_z=10.0), _w(plate_x=-3.8, plate_z=-2.0)),
    E=StubComponent(-1.675, _w(plate_z=1.5), _w(plate_x=-0.6, plate_z=-0.3)),
    F=StubComponent(-0.275, _w(plate_z=0.5), _w(plate_x=-0.15, plate_z=-0.1)),
)


def gen_pitch_pool(n: int, rng, count_probs=None) -> np.ndarray:
    """Pitch features in ``PITCH_FEATURES`` order with counts uniform over the
    12 counts (or ``count_probs``) and Gaussian locations."""
    c = rng.choice(len(COUNTS), size=n, p=count_probs)
    balls = np.array([COUNTS[i][0] for i in c], dtype=float)
    strikes = np.array([COUNTS[i][1] for i in c], dtype=float)
    side = (rng.random(n) < 0.58).astype(float)
    top = 3.4 + 0.1 * rng.standard_normal(n)
    bot = 1.6 + 0.07 * rng.standard_normal(n)
    px = 0.85 * rng.standard_normal(n)
    pz = 2.4 + 0.9 * rng.standard_normal(n)
    vx = 5.0 * (2 * side - 1) + 2.0 * rng.standard_normal(n)
    vy = -126.0 + 6.0 * rng.standard_normal(n)
    vz = -6.0 + 2.5 * rng.standard_normal(n)
    ax = -8.0 + 6.0 * rng.standard_normal(n)
    ay = 27.0 + 3.0 * rng.standard_normal(n)
    az = -20.0 + 8.0 * rng.standard_normal(n)
    ext = 6.4 + 0.4 * rng.standard_normal(n)
    return np.column_stack([balls, strikes, side, top, bot, px, pz, vx, vy, vz, ax, ay, az, ext])


@dataclass(frozen=True)
class CausalTruth:
    """Planted (alpha, beta_bs per mph, beta_sl per ft) of the three regressions."""

    contact: tuple = (0.1, -0.18, -0.6)
    fair: tuple = (0.05, -0.074, 0.036)
    xlw: tuple = (0.01, 0.022, 0.0)
    sigma_xlw: float = 0.4

    def suite(self):
        unit = (1.0, 1.0, 1.0)
        return CausalSuite({"contact": CausalFit("contact", self.contact, unit, 0),
                            "fair": CausalFit("fair", self.fair, unit, 0),
                            "xLW": CausalFit("xLW", self.xlw, unit, 0, self.sigma_xlw**2)})


@dataclass(frozen=True)
class PAWorldSpec:
    n_batters: int = 200
    swings_per_batter: int = 100
    pool_size: int = 6000
    truth: CausalTruth = CausalTruth()
    approach_sd: tuple = (0.45, 0.05)  # mph and ft per strike
    stubs: StubOutcomeModels = DEFAULT_STUBS
    seed: int = 0


@dataclass
class PAWorld:
    spec: PAWorldSpec
    pool: np.ndarray  # (n, 14) features
    models: StubOutcomeModels
    swings: pd.DataFrame  # row_id, batter_id, outcome, xlw
    predictions: pd.DataFrame  # row_id, p_swing, ..., xlw
    approaches: pd.DataFrame  # batter_id, gamma_bs, gamma_sl


def simulate_swing_outcomes(comp: dict, gamma: np.ndarray, truth: CausalTruth, rng):
    """Swing outcomes and xLW labels under the planted offset regressions.

    ``gamma`` is (n, 2).  Returns outcome names and labels (NaN unless fair).
    """
    def adj(coef):
        return coef[0] + gamma @ np.asarray(coef[1:], dtype=float)

    p_con = expit(logit(clip_probability(comp["p_con"])) + adj(truth.contact))
    p_fair = expit(logit(clip_probability(comp["p_fair"])) + adj(truth.fair))
    n = gamma.shape[0]
    u_con, u_fair, z = rng.random(n), rng.random(n), rng.standard_normal(n)
    contact = u_con < p_con
    fair = contact & (u_fair < p_fair)
    outcome = np.where(fair, "FairBall", np.where(contact, "FoulBall", "SwingingStrike"))
    xlw = np.where(fair, comp["xlw"] + adj(truth.xlw) + truth.sigma_xlw * z, np.nan)
    return outcome, xlw


def gen_pa_world(spec: PAWorldSpec = PAWorldSpec()) -> PAWorld:
    """Pitch pool, stub components and simulated swing rows with planted
    causal coefficients and known (centered) batter approaches."""
    rng = np.random.default_rng(spec.seed)
    pool = gen_pitch_pool(spec.pool_size, rng)
    ids = [f"b{i:04d}" for i in range(spec.n_batters)]
    g = rng.standard_normal((spec.n_batters, 2)) * np.asarray(spec.approach_sd)
    g -= g.mean(axis=0)
    n = spec.n_batters * spec.swings_per_batter
    batter = np.repeat(np.arange(spec.n_batters), spec.swings_per_batter)
    X = pool[rng.integers(0, spec.pool_size, n)]
    comp = spec.stubs.components(X)
    outcome, xlw = simulate_swing_outcomes(comp, g[batter], spec.truth, rng)
    row_id = np.arange(n)
    swings = pd.DataFrame({"row_id": row_id, "batter_id": np.asarray(ids)[batter], "outcome": outcome, "xlw": xlw})
    predictions = pd.DataFrame({"row_id": row_id, **comp})
    approaches = pd.DataFrame({"batter_id": ids, "gamma_bs": g[:, 0], "gamma_sl": g[:, 1]})
    return PAWorld(spec, pool, spec.stubs, swings, predictions, approaches)


def random_stub_world(seed: int, pool_size: int = 400, foul_heavy: bool = False):
    """Random stub components, causal coefficients and linear weights for
    chain-solver checks.  ``foul_heavy`` makes two-strike fouls likely.

    Returns ``(pool features, models, CausalSuite, LinearWeights)``.
    """
    rng = np.random.default_rng(seed)
    pool = gen_pitch_pool(pool_size, rng)
    mu, sd = pool.mean(axis=0), pool.std(axis=0)
    sd[sd == 0] = 1.0
    curved = np.isin(np.arange(14), [PITCH_FEATURES.index("plate_x"), PITCH_FEATURES.index("plate_z")])

    def comp(scale=0.4, base=0.0):
        # random effects on standardized features; curvature only in location
        u = rng.normal(0, scale, 14) / sd
        q = np.where(curved, -np.abs(rng.normal(0, 0.3, 14)), 0.0) / sd**2
        c = np.where(curved, mu, 0.0)
        # expand q (x - c)^2 into linear and constant terms
        lin = u - 2 * q * c
        const = base + rng.normal(0, 0.5) - u @ mu + np.sum(q * c**2)
        return StubComponent(float(const), tuple(lin.tolist()), tuple(q.tolist()))

    models = StubOutcomeModels(comp(), comp(base=-3.0), comp(base=1.5), comp(), comp(base=-2.5 if foul_heavy else 0.0),
                               comp(scale=0.1, base=0.3))
    unit = (1.0, 1.0, 1.0)
    fits = CausalSuite({t: CausalFit(t, tuple(rng.normal(0, 0.2, 3).tolist()), unit, 0) for t in ("contact", "fair", "xLW")})
    O = runexp.PAOutcome
    lw = runexp.LinearWeights({O.Strikeout: -0.27 + rng.normal(0, 0.02), O.Walk: 0.33 + rng.normal(0, 0.02),
                               O.HitByPitch: 0.36 + rng.normal(0, 0.02)})
    return pool, models, fits, lw


# --- end-to-end league ---------------------------------------------------------------

PITCH_SHAPES = {
    # type: (vy ft/s, vz, ax arm-side, az)
    "FF": (-134.0, -5.0, -7.0, -13.0),
    "SI": (-132.0, -6.5, -14.0, -22.0),
    "FC": (-128.0, -5.5, 2.0, -20.0),
    "SL": (-120.0, -6.0, 5.0, -30.0),
    "CH": (-118.0, -7.0, -12.0, -28.0),
    "CU": (-111.0, -4.0, 6.0, -40.0),
}
MAX_EXIT_BAT = 1.23  # exit speed ceiling = 1.23 bat speed + 0.23 pitch speed
MAX_EXIT_PITCH = 0.23


@dataclass(frozen=True)
class LeagueSpec:
    """Pitch-level league with linked play-by-play.

    Batters carry intention random effects for bat speed and swing length;
    their strike slopes are the approaches that shift contact and fair-ball
    probabilities through ``causal``.  Batted-ball value follows mechanically
    from exit speed, so no xLW coefficient is planted.
    """

    n_batters: int = 60
    n_pitchers: int = 40
    n_team_games: int = 250
    bat_speed: IntentionTruth = IntentionTruth()
    swing_length: IntentionTruth = SWING_LENGTH_TRUTH
    causal: CausalTruth = CausalTruth()
    stubs: StubOutcomeModels = DEFAULT_STUBS
    slots_per_game: int = 70
    seed: int = 0


@dataclass
class League:
    spec: LeagueSpec
    records: list
    events: list
    truth: dict


def batted_ball_result(ev, la, rng) -> np.ndarray:
    """Hit type from exit speed and launch angle (array of PAOutcome values)."""
    ev, la = np.asarray(ev, dtype=float), np.asarray(la, dtype=float)
    p_hr = expit(0.3 * (ev - 99.0)) * np.exp(-0.5 * ((la - 28.0) / 8.0) ** 2)
    p_hit = (1 - p_hr) * 0.6 * expit(0.1 * (ev - 80.0)) * np.exp(-0.5 * ((la - 12.0) / 30.0) ** 2)
    u = rng.random(ev.size)
    xbh = rng.random(ev.size)
    kind = np.where(xbh < 0.03, "Triple", np.where(xbh < 0.03 + 0.3 * expit(0.1 * (ev - 92.0)), "Double", "Single"))
    return np.where(u < p_hr, "HomeRun", np.where(u < p_hr + p_hit, kind, "OutInPlay"))


def _pitch_features(types, p_hand, b_side, balls, strikes, rng):
    n = len(types)
    shape = np.array([PITCH_SHAPES[t] for t in types]) if n else np.zeros((0, 4))
    arm = np.where(p_hand == "R", 1.0, -1.0)
    side_r = (b_side == "R").astype(float)
    vy = shape[:, 0] + 1.5 * rng.standard_normal(n)
    vx = arm * (4.0 + 1.5 * rng.standard_normal(n))
    vz = shape[:, 1] + 1.5 * rng.standard_normal(n)
    ax = arm * shape[:, 2] + 2.0 * rng.standard_normal(n)
    ay = 27.0 + 2.0 * rng.standard_normal(n)
    az = shape[:, 3] + 3.0 * rng.standard_normal(n)
    top = 3.4 + 0.1 * rng.standard_normal(n)
    bot = 1.6 + 0.07 * rng.standard_normal(n)
    px = 0.85 * rng.standard_normal(n)
    pz = 2.4 + 0.9 * rng.standard_normal(n)
    ext = 6.4 + 0.3 * rng.standard_normal(n)
    return np.column_stack([balls, strikes, side_r, top, bot, px, pz, vx, vy, vz, ax, ay, az, ext])


def _skewnormal_draw(truth: IntentionTruth, gamma_b, gamma_p, nu, X, b, p, rng):
    mu = intention_mean(truth, gamma_b, gamma_p, X, b, p)
    alpha = truth.alpha0 + nu[b]
    xi = skewnorm.mean_to_location(mu, truth.sigma, alpha)
    d = skewnorm.delta(alpha)
    n = len(b)
    return xi + truth.sigma * (d * np.abs(rng.standard_normal(n)) + np.sqrt(1 - d**2) * rng.standard_normal(n))


def gen_league(spec: LeagueSpec = LeagueSpec()) -> League:
    """Simulate a season of plate appearances pitch by pitch.

    Every team-game gets a nine-batter lineup and one pitcher.  PA outcomes
    do not depend on the base-out state, so all PA slots are simulated in
    lockstep and each game is then cut at its 27th out and replayed through
    the base-running table to produce the play-by-play.
    """
    from .ingest import Outcome, PitchRecord

    rng = np.random.default_rng(spec.seed)
    nb, npit, G, S = spec.n_batters, spec.n_pitchers, spec.n_team_games, spec.slots_per_game
    b_side = np.where(rng.random(nb) < 0.6, "R", "L")
    p_hand = np.where(rng.random(npit) < 0.7, "R", "L")
    g_bs, gp_bs, nu_bs = draw_effects(spec.bat_speed, nb, npit, rng)
    g_sl, gp_sl, nu_sl = draw_effects(spec.swing_length, nb, npit, rng)
    approach = np.column_stack([g_bs[:, 1], g_sl[:, 1]])
    primary = rng.choice(["FF", "SI", "FC"], size=npit, p=[0.6, 0.3, 0.1])
    share = rng.uniform(0.45, 0.65, npit)
    others = ["SL", "CH", "CU"]
    lineups = np.array([rng.choice(nb, 9, replace=False) for _ in range(G)])
    game_pitcher = rng.integers(0, npit, G)

    slot_game = np.repeat(np.arange(G), S)
    slot_k = np.tile(np.arange(S), G)
    slot_batter = lineups[slot_game, slot_k % 9]
    slot_pitcher = game_pitcher[slot_game]
    n_slots = G * S
    balls = np.zeros(n_slots, dtype=np.int64)
    strikes = np.zeros(n_slots, dtype=np.int64)
    result = np.full(n_slots, "", dtype=object)
    active = np.arange(n_slots)
    rows = []  # per step: dict of arrays
    step = 0
    while active.size:
        m = active.size
        bi, pi = slot_batter[active], slot_pitcher[active]
        is_primary = rng.random(m) < share[pi]
        types = np.where(is_primary, primary[pi], np.asarray(others)[rng.integers(0, 3, m)])
        X = _pitch_features(types, p_hand[pi], b_side[bi], balls[active], strikes[active], rng)
        comp = spec.stubs.components(X)
        adj = lambda coef: coef[0] + approach[bi] @ np.asarray(coef[1:])  # noqa: E731
        p_con = expit(logit(clip_probability(comp["p_con"])) + adj(spec.causal.contact))
        p_fair = expit(logit(clip_probability(comp["p_fair"])) + adj(spec.causal.fair))
        u = rng.random((m, 4))
        swing = u[:, 0] < comp["p_swing"]
        hbp = ~swing & (u[:, 1] < comp["p_hbp"])
        called_strike = ~swing & ~hbp & (u[:, 2] < comp["p_strike"])
        contact = swing & (u[:, 1] < p_con)
        fair = contact & (u[:, 2] < p_fair)
        outcome = np.select(
            [hbp, ~swing & called_strike, ~swing, ~contact, ~fair],
            ["HBP", "CalledStrike", "CalledBall", "SwingingStrike", "FoulBall"], "FairBall")
        # intended swing metrics for every swing
        loc_x = np.where(b_side[bi] == "R", X[:, 5], -X[:, 5])
        Xi = np.column_stack([balls[active], strikes[active], loc_x, X[:, 6]]).astype(float)
        bs = _skewnormal_draw(spec.bat_speed, g_bs, gp_bs, nu_bs, Xi, bi, pi, rng)
        sl = _skewnormal_draw(spec.swing_length, g_sl, gp_sl, nu_sl, Xi, bi, pi, rng)
        speed = np.sqrt(np.sum(X[:, 7:10] ** 2, axis=1)) * 3600.0 / 5280.0
        ev = (MAX_EXIT_BAT * bs + MAX_EXIT_PITCH * speed) * rng.uniform(0.6, 1.0, m)
        la = 12.0 + 25.0 * rng.standard_normal(m)
        spray = 22.0 * rng.standard_normal(m)
        dist = np.clip(1.6 * ev + 1.5 * la, 20.0, 230.0)
        rows.append(dict(slot=active.copy(), step=np.full(m, step), types=types, X=X, outcome=outcome, swing=swing,
                         contact=contact, fair=fair, bs=bs, sl=sl, ev=ev, la=la, spray=spray, dist=dist))
        # count transitions
        done = np.zeros(m, dtype=bool)
        ball = outcome == "CalledBall"
        strike = np.isin(outcome, ["CalledStrike", "SwingingStrike"])
        foul = outcome == "FoulBall"
        walk = ball & (balls[active] == 3)
        k = strike & (strikes[active] == 2)
        result[active[walk]] = "Walk"
        result[active[k]] = "Strikeout"
        result[active[hbp]] = "HitByPitch"
        result[active[fair]] = "FairBall"
        done |= walk | k | hbp | fair
        balls[active[ball & ~walk]] += 1
        strikes[active[(strike & ~k) | (foul & (strikes[active] < 2))]] += 1
        active = active[~done]
        step += 1

    # flatten pitches in (slot, step) order
    cat = {k: np.concatenate([r[k] for r in rows]) for k in rows[0]}
    order = np.lexsort((cat["step"], cat["slot"]))
    cat = {k: v[order] for k, v in cat.items()}
    last = np.r_[cat["slot"][1:] != cat["slot"][:-1], True]
    fair_rows = np.flatnonzero(last & cat["fair"])
    hit_type = np.full(n_slots, "", dtype=object)
    hit_type[cat["slot"][fair_rows]] = batted_ball_result(cat["ev"][fair_rows], cat["la"][fair_rows], rng)

    # play-by-play: cut each game at 27 outs
    events, keep_slot, pa_id = [], np.zeros(n_slots, dtype=bool), {}
    for g in range(G):
        outs_total, inning, state, seq = 0, 0, runexp.EMPTY, 0
        for k in range(S):
            slot = g * S + k
            res = result[slot] if result[slot] != "FairBall" else hit_type[slot]
            o = runexp.PAOutcome(res)
            post, runs, stranded = advance(state, o)
            iid = f"g{g:04d}-{inning + 1}"
            eid = f"{iid}-{seq:02d}"
            events.append(runexp.PlayEvent(iid, seq, state, post, runs, o, eid, stranded))
            keep_slot[slot] = True
            pa_id[slot] = eid
            state, seq = post, seq + 1
            if post.is_terminal:
                outs_total += 3
                inning += 1
                state, seq = runexp.EMPTY, 0
                if outs_total == 27:
                    break
        else:
            raise RuntimeError("slots_per_game too small for 27 outs")

    batter_ids = [f"b{j:04d}" for j in range(nb)]
    pitcher_ids = [f"p{j:04d}" for j in range(npit)]
    records = []
    oc_map = {o.value: o for o in Outcome}
    for i in np.flatnonzero(keep_slot[cat["slot"]]):
        slot = int(cat["slot"][i])
        b, p = int(slot_batter[slot]), int(slot_pitcher[slot])
        x = cat["X"][i]
        swing, contact = bool(cat["swing"][i]), bool(cat["contact"][i])
        fair_ball = bool(cat["fair"][i])
        hx = hy = None
        if fair_ball:
            hx, hy = hit_coordinates(cat["spray"][i], cat["dist"][i], b_side[b])
            hx, hy = round(float(hx), 2), round(float(hy), 2)
        records.append(PitchRecord(
            game_id=f"g{slot // S:04d}", batter_id=batter_ids[b], pitcher_id=pitcher_ids[p],
            batter_side=str(b_side[b]), pitcher_side=str(p_hand[p]), balls=int(x[0]), strikes=int(x[1]),
            pitch_type=str(cat["types"][i]), plate_x=round(float(x[5]), 3), plate_z=round(float(x[6]), 3),
            vel_at_plate=tuple(round(float(v), 3) for v in x[7:10]),
            acc_at_plate=tuple(round(float(v), 3) for v in x[10:13]),
            extension=round(float(x[13]), 2), sz_top=round(float(x[3]), 3), sz_bot=round(float(x[4]), 3),
            outcome=oc_map[str(cat["outcome"][i])],
            bat_speed=round(float(cat["bs"][i]), 1) if swing else None,
            swing_length=round(float(cat["sl"][i]), 2) if swing else None,
            exit_speed=round(float(cat["ev"][i]), 1) if contact else None,
            launch_angle=round(float(cat["la"][i]), 1) if contact else None,
            hit_x=hx, hit_y=hy, pa_event_id=pa_id[slot],
        ))
    truth = {
        "batter_ids": batter_ids, "pitcher_ids": pitcher_ids,
        "bat_speed": {"params": spec.bat_speed, "gamma_b": g_bs, "gamma_p": gp_bs, "nu": nu_bs},
        "swing_length": {"params": spec.swing_length, "gamma_b": g_sl, "gamma_p": gp_sl, "nu": nu_sl},
        "approach": approach, "causal": spec.causal,
    }
    return League(spec, records, events, truth)


def truth_summary(league: League) -> dict:
    """JSON-ready ground truth for recovery checks."""
    t = league.truth
    out = {"batter_ids": t["batter_ids"]}
    for key in ("bat_speed", "swing_length"):
        p = t[key]["params"]
        out[key] = {"mu0": p.mu0, "beta": list(p.beta), "alpha0": p.alpha0, "sigma": p.sigma,
                    "sd_p": p.sd_p, "sd_b": list(p.sd_b), "tau": p.tau,
                    "gamma_strikes": t[key]["gamma_b"][:, 1].tolist()}
    c = t["causal"]
    out["causal"] = {"contact": list(c.contact), "fair": list(c.fair)}
    return out
