"""Plate-appearance Markov reward process over ball-strike counts.

States are the 12 counts plus four terminal outcomes (strikeout, walk, HBP,
fair ball).  From a count, the next pitch is drawn from the league pitch pool
thrown in that count, and its outcome probabilities come from the six
pitch-outcome components:

* swing with probability A; a take is HBP with probability B, otherwise a
  called strike with probability D or a ball;
* a swing makes contact with probability ``sigmoid(logit C + a_con + b_con . g)``;
* contact is fair with probability ``sigmoid(logit E + a_fair + b_fair . g)``,
  else foul;
* a fair ball is worth ``F + a_xlw + b_xlw . g`` runs.

``g = (g_bs, g_sl)`` is the batter approach: intended change in bat speed
(mph) and swing length (ft) per strike.  Only C, E and F depend on it.
Strikeouts, walks and HBP earn their fixed linear weights.

The value of a count solves ``V = R + Q V``, where ``Q`` holds the
count-to-count transitions.  The two-strike foul is the only cycle, so value
iteration converges geometrically.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .causal import CausalSuite
from .gbm import ConfigurationError, clip_probability
from .runexp import LinearWeights, PAOutcome

logger = logging.getLogger(__name__)

COUNTS = tuple((b, s) for b in range(4) for s in range(3))
COUNT_INDEX = {c: i for i, c in enumerate(COUNTS)}
N_COUNTS = len(COUNTS)
TERMINALS = ("Strikeout", "Walk", "HitByPitch", "FairBall")
N_STATES = N_COUNTS + len(TERMINALS)
STATE_NAMES = tuple(f"{b}-{s}" for b, s in COUNTS) + TERMINALS
PITCH_OUTCOMES = ("HBP", "CalledBall", "CalledStrike", "SwingingStrike", "FoulBall", "FairBall")
COMPONENT_KEYS = ("p_swing", "p_hbp", "p_con", "p_strike", "p_fair", "xlw")
ROW_TOL = 1e-12
SELF_LOOP_LIMIT = 1.0 - 1e-9
PA_SCALE = 500


class DivergenceError(RuntimeError):
    """Value iteration cannot converge (self-loop probability ~ 1) or ran out of iterations."""


def count_transition(state, outcome: str):
    """Successor of a count after one pitch: a count tuple or a terminal name."""
    balls, strikes = state
    if outcome == "HBP":
        return "HitByPitch"
    if outcome == "FairBall":
        return "FairBall"
    if outcome == "CalledBall":
        return "Walk" if balls == 3 else (balls + 1, strikes)
    if outcome in ("CalledStrike", "SwingingStrike"):
        return "Strikeout" if strikes == 2 else (balls, strikes + 1)
    if outcome == "FoulBall":
        return (balls, min(strikes + 1, 2))
    raise ValueError(f"unknown pitch outcome {outcome!r}")


def _state_index(succ) -> int:
    return COUNT_INDEX[succ] if isinstance(succ, tuple) else N_COUNTS + TERMINALS.index(succ)


# SUCCESSOR[s, k]: state index reached from count s by pitch outcome k
SUCCESSOR = np.array([[_state_index(count_transition(c, o)) for o in PITCH_OUTCOMES] for c in COUNTS])


def _adjust(fits: CausalSuite, tag: str, gamma) -> float:
    f = fits[tag]
    return f.coef[0] + f.coef[1] * gamma[0] + f.coef[2] * gamma[1]


def outcome_probabilities(comp: dict, gamma, fits: CausalSuite):
    """Per-pitch outcome probabilities (n, 6) in ``PITCH_OUTCOMES`` order and
    the approach-adjusted fair-ball reward (n,)."""
    missing = [k for k in COMPONENT_KEYS if k not in comp]
    if missing:
        raise ConfigurationError(f"pitch outcome components missing: {missing}")
    A, B, D = comp["p_swing"], comp["p_hbp"], comp["p_strike"]
    con = expit(logit(clip_probability(comp["p_con"])) + _adjust(fits, "contact", gamma))
    fair = expit(logit(clip_probability(comp["p_fair"])) + _adjust(fits, "fair", gamma))
    take = 1.0 - A
    probs = np.column_stack([
        take * B, take * (1 - B) * (1 - D), take * (1 - B) * D,
        A * (1 - con), A * con * (1 - fair), A * con * fair,
    ])
    reward = comp["xlw"] + _adjust(fits, "xLW", gamma)
    return probs, reward


def pitch_transition(state, comp: dict, gamma, fits: CausalSuite):
    """Successor-state probability vectors (n, 16) and fair rewards for
    pitches thrown in count ``state``."""
    probs, reward = outcome_probabilities(comp, gamma, fits)
    out = np.zeros((probs.shape[0], N_STATES))
    s = COUNT_INDEX[tuple(state)]
    for k in range(len(PITCH_OUTCOMES)):
        out[:, SUCCESSOR[s, k]] += probs[:, k]
    return out, reward


@dataclass
class PitchPool:
    """League pitches with their component predictions, grouped by count.

    Rows are stored sorted by count (stable), so per-count reductions always
    sum in the same order.
    """

    count: np.ndarray  # (n,) count index
    components: dict  # key -> (n,)
    starts: np.ndarray  # (12,) first row of each count
    sizes: np.ndarray  # (12,)

    @classmethod
    def build(cls, X, models, balls=None, strikes=None) -> "PitchPool":
        """Evaluate ``models.components`` on the pool features once.

        ``balls``/``strikes`` default to the first two feature columns.
        """
        X = np.asarray(X, dtype=float)
        balls = X[:, 0] if balls is None else np.asarray(balls)
        strikes = X[:, 1] if strikes is None else np.asarray(strikes)
        cidx = (balls.astype(int) * 3 + strikes.astype(int))
        if np.any((cidx < 0) | (cidx >= N_COUNTS)):
            raise ValueError("pool contains invalid counts")
        order = np.argsort(cidx, kind="stable")
        comp = models.components(X[order])
        missing = [k for k in COMPONENT_KEYS if k not in comp]
        if missing:
            raise ConfigurationError(f"pitch outcome components missing: {missing}")
        sizes = np.bincount(cidx, minlength=N_COUNTS)
        starts = np.concatenate(([0], np.cumsum(sizes)[:-1]))
        return cls(cidx[order], {k: np.asarray(comp[k], dtype=float) for k in COMPONENT_KEYS}, starts, sizes)

    def empty_counts(self) -> list:
        return [f"{b}-{s}" for (b, s), n in zip(COUNTS, self.sizes) if n == 0]


@dataclass
class TransitionModel:
    """``Q[s, s']`` over 12 counts x 16 states, fair reward per count, and the
    fixed terminal rewards."""

    Q: np.ndarray
    fair_reward: np.ndarray
    terminal_reward: dict

    def __post_init__(self):
        if np.any(self.Q < 0) or np.max(np.abs(self.Q.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValueError("transition rows must be non-negative and sum to 1")

    def expected_reward(self) -> np.ndarray:
        """One-step expected reward from each count."""
        r = np.zeros((N_COUNTS, N_STATES))
        for name in ("Strikeout", "Walk", "HitByPitch"):
            r[:, N_COUNTS + TERMINALS.index(name)] = self.terminal_reward[name]
        r[:, N_COUNTS + TERMINALS.index("FairBall")] = self.fair_reward
        return np.sum(self.Q * r, axis=1)

    def to_json(self) -> str:
        return json.dumps({"states": list(STATE_NAMES), "Q": self.Q.tolist(),
                           "fair_reward": self.fair_reward.tolist(), "terminal_reward": self.terminal_reward})

    @classmethod
    def from_json(cls, text: str) -> "TransitionModel":
        d = json.loads(text)
        return cls(np.asarray(d["Q"]), np.asarray(d["fair_reward"]), d["terminal_reward"])


def terminal_rewards(lw: LinearWeights) -> dict:
    return {"Strikeout": lw[PAOutcome.Strikeout], "Walk": lw[PAOutcome.Walk], "HitByPitch": lw[PAOutcome.HitByPitch]}


def aggregate_transition(pool: PitchPool, gamma, fits: CausalSuite, lw: LinearWeights) -> TransitionModel:
    """Mean per-pitch transition vector and fair reward over the pitches of
    each count.

    Raises
    ------
    ValueError
        If a count has no pitches in the pool (the message names it).
    """
    empty = pool.empty_counts()
    if empty:
        raise ValueError(f"pitch pool has no pitches in count(s) {empty}")
    probs, reward = outcome_probabilities(pool.components, gamma, fits)
    Q = np.zeros((N_COUNTS, N_STATES))
    fair_reward = np.zeros(N_COUNTS)
    for s in range(N_COUNTS):
        sl = slice(pool.starts[s], pool.starts[s] + pool.sizes[s])
        mean_probs = np.sum(probs[sl], axis=0) / pool.sizes[s]
        for k in range(len(PITCH_OUTCOMES)):
            Q[s, SUCCESSOR[s, k]] += mean_probs[k]
        fair_reward[s] = np.sum(reward[sl]) / pool.sizes[s]
    return TransitionModel(Q, fair_reward, terminal_rewards(lw))


@dataclass
class ValueFunction:
    values: np.ndarray  # (12,)
    iterations: int = 0

    def __getitem__(self, count) -> float:
        return float(self.values[COUNT_INDEX[tuple(count)]])

    def to_json(self) -> str:
        return json.dumps({f"{b}-{s}": float(v) for (b, s), v in zip(COUNTS, self.values)})


def _check_self_loops(model: TransitionModel):
    loops = np.diag(model.Q[:, :N_COUNTS])
    if np.any(loops >= SELF_LOOP_LIMIT):
        bad = [STATE_NAMES[i] for i in np.flatnonzero(loops >= SELF_LOOP_LIMIT)]
        raise DivergenceError(f"self-loop probability ~1 at {bad}")


def solve_bellman(model: TransitionModel, tol: float = 1e-10, max_iter: int = 500) -> ValueFunction:
    """Value iteration from ``V = 0`` until ``max |dV| < tol``."""
    _check_self_loops(model)
    R = model.expected_reward()
    QN = model.Q[:, :N_COUNTS]
    V = np.zeros(N_COUNTS)
    for it in range(1, max_iter + 1):
        new = R + QN @ V
        delta = np.max(np.abs(new - V))
        V = new
        if delta < tol:
            return ValueFunction(V, it)
    raise DivergenceError(f"value iteration did not converge in {max_iter} iterations")


def solve_direct(model: TransitionModel) -> ValueFunction:
    """``(I - Q_N) V = R`` by a dense linear solve."""
    _check_self_loops(model)
    return ValueFunction(np.linalg.solve(np.eye(N_COUNTS) - model.Q[:, :N_COUNTS], model.expected_reward()))


def bellman_residual(model: TransitionModel, vf: ValueFunction) -> float:
    return float(np.max(np.abs(model.expected_reward() + model.Q[:, :N_COUNTS] @ vf.values - vf.values)))


@dataclass
class ApproachValue:
    gamma: tuple
    value: float  # V(0-0), runs per PA
    baseline: float  # V(0-0) at the average approach
    relative: float  # value - baseline

    @property
    def per_500(self) -> float:
        return self.relative * PA_SCALE


def approach_value(gamma, pool: PitchPool, fits: CausalSuite, lw: LinearWeights, average=(0.0, 0.0)) -> ApproachValue:
    """Run value of an approach relative to the average approach."""
    gamma = (float(gamma[0]), float(gamma[1]))
    average = (float(average[0]), float(average[1]))
    v = solve_bellman(aggregate_transition(pool, gamma, fits, lw))[(0, 0)]
    base = v if gamma == average else solve_bellman(aggregate_transition(pool, average, fits, lw))[(0, 0)]
    return ApproachValue(gamma, v, base, v - base)


def approach_grid(bs_range, sl_range, resolution, pool: PitchPool, fits: CausalSuite, lw: LinearWeights,
                  average=(0.0, 0.0)) -> pd.DataFrame:
    """Evaluate approach values on a ``resolution`` grid (int or (n_bs, n_sl)).

    Rows are sorted by ``(gamma_bs, gamma_sl)``; ``runs_per_500pa`` is
    relative to the average approach.
    """
    n_bs, n_sl = (resolution, resolution) if np.isscalar(resolution) else resolution
    bs = np.linspace(bs_range[0], bs_range[1], int(n_bs)) if n_bs > 1 else np.array([float(bs_range[0])])
    sl = np.linspace(sl_range[0], sl_range[1], int(n_sl)) if n_sl > 1 else np.array([float(sl_range[0])])
    base = solve_bellman(aggregate_transition(pool, average, fits, lw))[(0, 0)]
    rows = []
    for g_bs in np.sort(bs):
        for g_sl in np.sort(sl):
            v = solve_bellman(aggregate_transition(pool, (g_bs, g_sl), fits, lw))[(0, 0)]
            rows.append({"gamma_bs": float(g_bs), "gamma_sl": float(g_sl), "value": v,
                         "runs_per_500pa": (v - base) * PA_SCALE})
    return pd.DataFrame(rows)


def simulate_pa(gamma, pool: PitchPool, fits: CausalSuite, lw: LinearWeights, n: int, seed: int = 0):
    """Monte Carlo plate appearances under an approach.

    Each step draws a pitch uniformly from the pool pitches of the current
    count and samples its outcome.  A fair ball earns the count's mean fair
    reward, the same quantity the Bellman model uses.

    Returns
    -------
    mean, se : float
        Mean reward per PA and its Monte Carlo standard error.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    model = aggregate_transition(pool, gamma, fits, lw)
    _check_self_loops(model)
    probs, _ = outcome_probabilities(pool.components, gamma, fits)
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = np.inf  # rounding never leaves an outcome unselected
    term_reward = np.array([model.terminal_reward[t] for t in TERMINALS[:3]])
    rng = np.random.default_rng(seed)
    state = np.zeros(n, dtype=np.int64)
    reward = np.zeros(n)
    active = np.arange(n)
    while active.size:
        s = state[active]
        pick = pool.starts[s] + np.floor(rng.random(active.size) * pool.sizes[s]).astype(np.int64)
        k = np.argmax(rng.random(active.size)[:, None] < cum[pick], axis=1)
        nxt = SUCCESSOR[s, k]
        done = nxt >= N_COUNTS
        t = nxt[done] - N_COUNTS
        r = np.where(t == 3, model.fair_reward[s[done]], term_reward[np.minimum(t, 2)])
        reward[active[done]] = r
        state[active] = nxt
        active = active[~done]
    se = float(reward.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return float(reward.mean()), se


def batter_rankings(approaches, pool: PitchPool, fits: CausalSuite, lw: LinearWeights,
                    fixed_strikes=(0.0, 0.0)) -> pd.DataFrame:
    """Run value of every batter's approach, ranked best first.

    ``approaches`` rows give centered strike slopes ``gamma_bs``/``gamma_sl``
    (used for valuation).  The reported approach adds the population strike
    effects ``fixed_strikes`` (mph, ft) and shows swing length in inches.
    """
    if not isinstance(approaches, pd.DataFrame):
        approaches = pd.DataFrame([{"batter_id": a.batter_id, "gamma_bs": a.gamma_bs, "gamma_sl": a.gamma_sl}
                                   for a in approaches])
    avg = (float(approaches["gamma_bs"].mean()), float(approaches["gamma_sl"].mean()))
    base = solve_bellman(aggregate_transition(pool, avg, fits, lw))[(0, 0)]
    vals = [solve_bellman(aggregate_transition(pool, (r.gamma_bs, r.gamma_sl), fits, lw))[(0, 0)]
            for r in approaches.itertuples()]
    out = pd.DataFrame({
        "batter": approaches["batter_id"].astype(str).to_numpy(),
        "bat_speed_approach_mph": approaches["gamma_bs"].to_numpy() + fixed_strikes[0],
        "swing_length_approach_in": (approaches["gamma_sl"].to_numpy() + fixed_strikes[1]) * 12.0,
        "runs_per_500pa": (np.asarray(vals) - base) * PA_SCALE,
    })
    out = out.sort_values(["runs_per_500pa", "batter"], ascending=[False, True], kind="stable").reset_index(drop=True)
    out.insert(0, "rank", np.arange(1, len(out) + 1))
    return out
