"""Hierarchical skew-normal intention model: layout, transforms, log posterior.

The response for swing ``i`` follows a skew-normal with mean ``mu_i``, scale
``sigma`` and shape ``alpha_i``::

    mu_i    = mu0 + g_p[p_i] + g_b[b_i, 0]
              + beta_balls * balls_i
              + (beta_strikes + g_b[b_i, 1]) * strikes_i
              + (beta_x + g_b[b_i, 2]) * loc_x_i
              + (beta_z + g_b[b_i, 3]) * loc_z_i
    alpha_i = alpha0 + nu[b_i]

Batter effects ``g_b[b] ~ N(0, diag(sd_b) R diag(sd_b))``, pitcher intercepts
``g_p ~ N(0, sd_p^2)``, shape intercepts ``nu ~ N(0, tau^2)``.  The Gaussian
variant drops ``alpha0``, ``tau`` and ``nu``.

Sampling happens on an unconstrained flat vector: sds on the log scale and
the correlation matrix through canonical partial correlations (``tanh``).
Covariates are centered at fixed reference values (``Layout.center``,
normally the data means) before they meet the sampler, which removes the
intercept/slope ridge.  Batter effects are expressed in that centered basis:
each batter's mean at the reference point is sampled directly (fully
centered; it is usually well identified), the slopes non-centered given it.  Pitcher and shape effects
are non-centered.  Every transform is exact; reported parameters keep the
uncentered meaning above.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import jax
import jax.numpy as jnp
import numpy as np
from jax.scipy.special import erfc, gammaln

from ..skewnorm import TAIL_SWITCH, _TAIL_COEF

jax.config.update("jax_enable_x64", True)

N_RE = 4  # batter intercept + strikes/x/z slopes
FIXED_NAMES = ("mu0", "beta_balls", "beta_strikes", "beta_x", "beta_z")
RE_NAMES = ("intercept", "strikes", "x", "z")
SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)
HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
SCALAR_BLOCKS = frozenset({"alpha0", "log_sigma", "log_sd_p", "log_tau"})


@dataclass(frozen=True)
class IntentionData:
    """Column arrays for the intention model; ids are mapped to 0-based codes."""

    y: np.ndarray
    balls: np.ndarray
    strikes: np.ndarray
    loc_x: np.ndarray
    loc_z: np.ndarray
    batter: np.ndarray
    pitcher: np.ndarray
    batter_ids: tuple = ()
    pitcher_ids: tuple = ()

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def n_batters(self) -> int:
        return len(self.batter_ids)

    @property
    def n_pitchers(self) -> int:
        return len(self.pitcher_ids)

    @classmethod
    def from_observations(cls, obs, batter_ids=None, pitcher_ids=None) -> "IntentionData":
        """Build from :class:`~swingintent.ingest.IntentionObservation` rows.

        Passing ``batter_ids`` / ``pitcher_ids`` fixes the code space (needed
        when a held-out split must share codes with its training half).
        Observations whose ids are outside a supplied id space get code -1,
        which every consumer treats as "population level".
        """
        obs = list(obs)
        if batter_ids is None:
            batter_ids = tuple(sorted({o.batter_id for o in obs}, key=str))
        if pitcher_ids is None:
            pitcher_ids = tuple(sorted({o.pitcher_id for o in obs}, key=str))
        bmap = {b: i for i, b in enumerate(batter_ids)}
        pmap = {p: i for i, p in enumerate(pitcher_ids)}
        return cls(
            y=np.array([o.response for o in obs], dtype=float),
            balls=np.array([o.balls for o in obs], dtype=float),
            strikes=np.array([o.strikes for o in obs], dtype=float),
            loc_x=np.array([o.loc_x for o in obs], dtype=float),
            loc_z=np.array([o.loc_z for o in obs], dtype=float),
            batter=np.array([bmap.get(o.batter_id, -1) for o in obs], dtype=np.int64),
            pitcher=np.array([pmap.get(o.pitcher_id, -1) for o in obs], dtype=np.int64),
            batter_ids=tuple(batter_ids),
            pitcher_ids=tuple(pitcher_ids),
        )

    def subset(self, idx) -> "IntentionData":
        idx = np.asarray(idx)
        return replace(
            self,
            y=self.y[idx], balls=self.balls[idx], strikes=self.strikes[idx],
            loc_x=self.loc_x[idx], loc_z=self.loc_z[idx],
            batter=self.batter[idx], pitcher=self.pitcher[idx],
        )

    def with_response(self, y) -> "IntentionData":
        return replace(self, y=np.asarray(y, dtype=float))

    def covariates(self) -> np.ndarray:
        return np.column_stack([self.balls, self.strikes, self.loc_x, self.loc_z])


@dataclass(frozen=True)
class PriorConfig:
    """Prior scales.  ``None`` entries are resolved from the response sd.

    Defaults: half-t(3) with scale ``2.5 * sd(y)`` on every mean-level sd and
    on the residual scale, ``Normal(0, 10 * sd(y))`` on fixed effects,
    ``Normal(0, 5)`` on the shape intercept, a unit-free half-t(3) with scale
    2.5 on the shape sd, and LKJ(1) on the batter correlation matrix.
    """

    sd_scale: float | None = None
    fixed_scale: float | None = None
    shape_scale: float = 5.0
    shape_sd_scale: float = 2.5
    lkj_eta: float = 1.0
    df: float = 3.0

    def resolve(self, y) -> "PriorConfig":
        sd = float(np.std(y, ddof=1)) if len(y) > 1 else 0.0
        if not np.isfinite(sd) or sd <= 0:
            # degenerate response: fall back to a unit-free scale
            sd = max(abs(float(np.mean(y))) * 1e-2, 1e-2) if len(y) else 1.0
        return replace(
            self,
            sd_scale=self.sd_scale if self.sd_scale is not None else 2.5 * sd,
            fixed_scale=self.fixed_scale if self.fixed_scale is not None else 10.0 * sd,
        )


@dataclass(frozen=True)
class Layout:
    """Positions of each block inside the flat unconstrained vector."""

    n_batters: int
    n_pitchers: int
    skew: bool = True
    center: tuple = (0.0, 0.0, 0.0, 0.0)  # reference balls, strikes, loc_x, loc_z
    blocks: dict = field(init=False, repr=False, compare=False)

    @classmethod
    def for_data(cls, data: "IntentionData", skew: bool = True) -> "Layout":
        center = tuple(float(v) for v in data.covariates().mean(axis=0)) if data.n else (0.0,) * 4
        return cls(data.n_batters, data.n_pitchers, skew=skew, center=center)

    def __post_init__(self):
        sizes = [("fixed", len(FIXED_NAMES))]
        if self.skew:
            sizes.append(("alpha0", 1))
        sizes += [
            ("log_sigma", 1),
            ("log_sd_p", 1),
            ("log_sd_b", N_RE),
            ("corr_raw", N_RE * (N_RE - 1) // 2),
        ]
        if self.skew:
            sizes.append(("log_tau", 1))
        sizes += [("z_b", self.n_batters * N_RE)]
        if self.skew:
            sizes.append(("z_nu", self.n_batters))
        sizes.append(("z_p", self.n_pitchers))
        blocks, start = {}, 0
        for name, size in sizes:
            blocks[name] = (start, start + size)
            start += size
        object.__setattr__(self, "blocks", blocks)

    @property
    def size(self) -> int:
        return max(stop for _, stop in self.blocks.values())

    def unpack(self, theta) -> dict:
        out = {}
        for name, (a, b) in self.blocks.items():
            v = theta[..., a:b]
            if name == "z_b":
                v = v.reshape(v.shape[:-1] + (self.n_batters, N_RE))
            elif name in SCALAR_BLOCKS:
                v = v[..., 0]
            out[name] = v
        return out

    def pack(self, parts: dict):
        pieces = []
        for name, (a, b) in self.blocks.items():
            v = jnp.asarray(parts[name], dtype=float)
            if name == "z_b":
                v = v.reshape(v.shape[:-2] + (b - a,))
            elif name in SCALAR_BLOCKS:
                v = v[..., None]
            pieces.append(v)
        return jnp.concatenate(pieces, axis=-1)


# --- correlation-matrix transform -----------------------------------------


def corr_cholesky(raw):
    """Map unconstrained values to a Cholesky factor of a correlation matrix.

    Canonical partial correlations ``tanh(raw)`` fill the strict lower
    triangle row by row.  Returns ``(L, log_jacobian)`` where the Jacobian is
    that of ``raw -> strict-lower(L)``.
    """
    d = N_RE
    cpc = jnp.tanh(raw)
    logj = jnp.sum(jnp.log1p(-cpc**2))
    rows = [jnp.zeros(d).at[0].set(1.0)]
    k = 0
    for i in range(1, d):
        row = []
        rem = 1.0
        for j in range(i):
            row.append(cpc[k] * jnp.sqrt(rem))
            logj = logj + 0.5 * jnp.log(rem)
            rem = rem - row[-1] ** 2
            k += 1
        row.append(jnp.sqrt(rem))
        row += [0.0] * (d - i - 1)
        rows.append(jnp.stack([jnp.asarray(r, dtype=float) for r in row]))
    return jnp.stack(rows), logj


def lkj_cholesky_logdensity(L, eta):
    """LKJ(eta) density expressed on the Cholesky factor (unnormalized)."""
    d = L.shape[0]
    expo = jnp.array([d - i - 1 + 2.0 * (eta - 1.0) for i in range(1, d)])
    return jnp.sum(expo * jnp.log(jnp.diagonal(L)[1:]))


# --- densities ---------------------------------------------------------------


def half_t_logpdf(x, scale, df):
    z = x / scale
    return (
        jnp.log(2.0)
        + gammaln((df + 1) / 2)
        - gammaln(df / 2)
        - 0.5 * jnp.log(df * jnp.pi)
        - jnp.log(scale)
        - (df + 1) / 2 * jnp.log1p(z**2 / df)
    )


def normal_logpdf(x, loc, scale):
    return -HALF_LOG_2PI - jnp.log(scale) - 0.5 * ((x - loc) / scale) ** 2


def _log_norm_cdf_mills(t):
    """``log Phi(t)`` and the Mills ratio ``phi(t) / Phi(t)`` in one pass.

    Both branches share one log: above the switch ``Phi = erfc(.) / 2``, below
    it ``Phi = phi(t) * S(t) / (-t)`` with ``S`` the asymptotic series, so the
    series branch needs no ``erfc`` and its Mills ratio is ``-t / S``.
    """
    upper = t >= TAIL_SWITCH
    # where, not max/min, so the switch point gets a one-sided gradient
    hi = jnp.where(upper, t, TAIL_SWITCH)
    lo = jnp.where(upper, TAIL_SWITCH, t)
    inv = 1.0 / lo**2
    series = jnp.polyval(jnp.asarray(_TAIL_COEF[::-1]), inv)
    core = jnp.where(upper, 0.5 * erfc(-hi / jnp.sqrt(2.0)), series / -lo)
    log_core = jnp.log(core)
    lc = jnp.where(upper, log_core, log_core - 0.5 * lo**2 - HALF_LOG_2PI)
    dens = jnp.where(upper, jnp.exp(-0.5 * hi**2 - HALF_LOG_2PI), 1.0)
    return lc, dens / core


def log_norm_cdf(t):
    """JAX twin of :func:`swingintent.skewnorm.log_norm_cdf`.

    Both branches are evaluated on clamped inputs so gradients stay finite.
    """
    return _log_norm_cdf_mills(t)[0]


@jax.custom_vjp
def skewnormal_mean_logpdf(y, mean, scale, shape):
    """Skew-normal log density with the *mean* as location argument.

    The reverse-mode rule reuses the forward Mills ratio, so ``log Phi`` is
    evaluated once per observation and gradient.
    """
    return _sn_forward(y, mean, scale, shape)[0]


def _sn_forward(y, mean, scale, shape):
    delta = shape / jnp.sqrt(1.0 + shape**2)
    z = (y - mean) / scale + delta * SQRT_2_OVER_PI
    lc, mills = _log_norm_cdf_mills(shape * z)
    out = jnp.log(2.0) - jnp.log(scale) - HALF_LOG_2PI - 0.5 * z**2 + lc
    return out, (z, mills, delta, scale, shape)


def _sn_fwd(y, mean, scale, shape):
    out, res = _sn_forward(y, mean, scale, shape)
    return out, (res, jnp.shape(mean), jnp.shape(scale), jnp.shape(shape))


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return jnp.sum(g, axis=tuple(range(g.ndim - len(shape)))).reshape(shape)


def _sn_bwd(res, ct):
    (z, mills, delta, scale, shape), s_mean, s_scale, s_shape = res
    dz = -z + shape * mills
    d_mean = -dz / scale
    d_scale = (-1.0 - dz * (z - delta * SQRT_2_OVER_PI)) / scale
    d_shape = mills * z + dz * SQRT_2_OVER_PI * (1.0 + shape**2) ** -1.5
    return (
        ct * dz / scale,
        _unbroadcast(ct * d_mean, s_mean),
        _unbroadcast(ct * d_scale, s_scale),
        _unbroadcast(ct * d_shape, s_shape),
    )


skewnormal_mean_logpdf.defvjp(_sn_fwd, _sn_bwd)


# --- natural parameters ------------------------------------------------------


def batter_basis(sd_b, L, center):
    """Shift matrix ``A`` and ``chol(A Sigma A')`` for the centered batter basis.

    ``A`` maps ``(intercept, strikes, x, z)`` effects to the same effects with
    the intercept read at the reference covariates.
    """
    A = jnp.eye(N_RE).at[0, 1:].set(jnp.asarray(center[1:], dtype=float))
    cov = (sd_b[:, None] * L) @ (sd_b[:, None] * L).T
    return A, jnp.linalg.cholesky(A @ cov @ A.T)


def natural_params(theta, layout: Layout) -> dict:
    """Constrained model parameters from one unconstrained vector."""
    u = layout.unpack(theta)
    center = jnp.asarray(layout.center, dtype=float)
    L, _ = corr_cholesky(u["corr_raw"])
    sd_b = jnp.exp(u["log_sd_b"])
    _, C = batter_basis(sd_b, L, layout.center)
    # column 0 of z_b holds each batter's mean at the reference point
    g0 = u["z_b"][:, 0] - u["fixed"][0]
    slopes = jnp.outer(g0, C[1:, 0] / C[0, 0]) + u["z_b"][:, 1:] @ C[1:, 1:].T
    beta = u["fixed"][1:]
    out = {
        "mu0": u["fixed"][0] - center @ beta,
        "beta": beta,
        "sigma": jnp.exp(u["log_sigma"]),
        "sd_p": jnp.exp(u["log_sd_p"]),
        "sd_b": sd_b,
        "corr_chol": L,
        "gamma_b": jnp.column_stack([g0 - slopes @ center[1:], slopes]),
        "gamma_p": jnp.exp(u["log_sd_p"]) * u["z_p"],
    }
    if layout.skew:
        out["alpha0"] = u["alpha0"]
        out["tau"] = jnp.exp(u["log_tau"])
        out["nu"] = out["tau"] * u["z_nu"]
    else:
        out["alpha0"] = jnp.asarray(0.0)
        out["tau"] = jnp.asarray(0.0)
        out["nu"] = jnp.zeros(layout.n_batters)
    return out


@jax.custom_vjp
def _take(table, codes):
    return table[codes]


def _take_fwd(table, codes):
    return table[codes], (codes, table.shape[0])


def _take_bwd(res, ct):
    codes, m = res
    return jax.ops.segment_sum(ct, codes, num_segments=m), None


_take.defvjp(_take_fwd, _take_bwd)


def _rows(table, codes):
    """``table[codes]`` with code -1 mapped to an all-zero row."""
    pad = jnp.zeros((1,) + table.shape[1:], dtype=table.dtype)
    ext = jnp.concatenate([table, pad])
    return _take(ext, jnp.where(codes < 0, table.shape[0], codes))


def linear_predictor(nat: dict, X, batter, pitcher):
    """Mean of each observation.  ``X`` columns: balls, strikes, loc_x, loc_z.

    Codes of -1 (unknown batter/pitcher) contribute zero effects.
    """
    gb = _rows(nat["gamma_b"], batter)
    gp = _rows(nat["gamma_p"], pitcher)
    return nat["mu0"] + gp + gb[:, 0] + X @ nat["beta"] + jnp.sum(gb[:, 1:] * X[:, 1:], axis=1)


def shape_predictor(nat: dict, batter):
    return nat["alpha0"] + _rows(nat["nu"], batter)


def pointwise_loglik(nat: dict, X, y, batter, pitcher, skew: bool):
    mu = linear_predictor(nat, X, batter, pitcher)
    if skew:
        return skewnormal_mean_logpdf(y, mu, nat["sigma"], shape_predictor(nat, batter))
    return normal_logpdf(y, mu, nat["sigma"])


def log_prior_natural(nat: dict, priors: PriorConfig, skew: bool):
    """Prior density of the hyperparameters and fixed effects (no random effects)."""
    lp = normal_logpdf(nat["mu0"], 0.0, priors.fixed_scale)
    lp += jnp.sum(normal_logpdf(nat["beta"], 0.0, priors.fixed_scale))
    lp += half_t_logpdf(nat["sigma"], priors.sd_scale, priors.df)
    lp += half_t_logpdf(nat["sd_p"], priors.sd_scale, priors.df)
    lp += jnp.sum(half_t_logpdf(nat["sd_b"], priors.sd_scale, priors.df))
    if skew:
        lp += normal_logpdf(nat["alpha0"], 0.0, priors.shape_scale)
        lp += half_t_logpdf(nat["tau"], priors.shape_sd_scale, priors.df)
    return lp


def make_log_posterior(data: IntentionData, layout: Layout, priors: PriorConfig):
    """Return a jittable ``theta -> log posterior`` closure over ``data``.

    ``priors`` must already be resolved (see :meth:`PriorConfig.resolve`).
    """
    X = jnp.asarray(data.covariates())
    y = jnp.asarray(data.y)
    batter = jnp.asarray(data.batter)
    pitcher = jnp.asarray(data.pitcher)
    skew = layout.skew

    def log_posterior(theta):
        u = layout.unpack(theta)
        nat = natural_params(theta, layout)
        L, logj_corr = corr_cholesky(u["corr_raw"])
        lp = jnp.sum(pointwise_loglik(nat, X, y, batter, pitcher, skew))
        lp += log_prior_natural(nat, priors, skew)
        # log-scale Jacobians for every sd
        lp += u["log_sigma"] + u["log_sd_p"] + jnp.sum(u["log_sd_b"])
        lp += lkj_cholesky_logdensity(L, priors.lkj_eta) + logj_corr
        # centered intercept column: its density carries the -log C00 Jacobian
        _, C = batter_basis(nat["sd_b"], L, layout.center)
        lp += jnp.sum(normal_logpdf(u["z_b"][:, 0], u["fixed"][0], C[0, 0]))
        lp += jnp.sum(normal_logpdf(u["z_b"][:, 1:], 0.0, 1.0))
        lp += jnp.sum(normal_logpdf(u["z_p"], 0.0, 1.0))
        if skew:
            lp += u["log_tau"]
            lp += jnp.sum(normal_logpdf(u["z_nu"], 0.0, 1.0))
        return lp

    return log_posterior


def log_posterior(theta, data: IntentionData, layout: Layout, priors: PriorConfig | None = None):
    """Evaluate the log posterior at one unconstrained point (unjitted)."""
    priors = (priors or PriorConfig()).resolve(data.y)
    return make_log_posterior(data, layout, priors)(jnp.asarray(theta, dtype=float))


def centered_log_posterior(nat: dict, corr_raw, data: IntentionData, priors: PriorConfig, skew=True):
    """Log posterior in the centered parameterization.

    Random effects enter directly with their hierarchical normal densities;
    hyperparameters are still on the unconstrained scale (log sds and
    ``corr_raw``), so this differs from the non-centered density only by the
    Jacobian of ``z -> effects``.
    """
    X = jnp.asarray(data.covariates())
    L, logj_corr = corr_cholesky(jnp.asarray(corr_raw))
    lp = jnp.sum(pointwise_loglik(nat, X, jnp.asarray(data.y), jnp.asarray(data.batter), jnp.asarray(data.pitcher), skew))
    lp += log_prior_natural(nat, priors, skew)
    lp += jnp.log(nat["sigma"]) + jnp.log(nat["sd_p"]) + jnp.sum(jnp.log(nat["sd_b"]))
    lp += lkj_cholesky_logdensity(L, priors.lkj_eta) + logj_corr
    cov = (nat["sd_b"][:, None] * L) @ (nat["sd_b"][:, None] * L).T
    sign, logdet = jnp.linalg.slogdet(cov)
    quad = jnp.einsum("bi,ij,bj->b", nat["gamma_b"], jnp.linalg.inv(cov), nat["gamma_b"])
    lp += jnp.sum(-0.5 * quad - 0.5 * logdet - N_RE * HALF_LOG_2PI)
    lp += jnp.sum(normal_logpdf(nat["gamma_p"], 0.0, nat["sd_p"]))
    if skew:
        lp += jnp.log(nat["tau"])
        lp += jnp.sum(normal_logpdf(nat["nu"], 0.0, nat["tau"]))
    return lp


def noncentered_jacobian(nat: dict, n_batters: int, n_pitchers: int, skew=True, center=(0.0,) * N_RE):
    """log |d effects / d theta| for the sampler's effect transform."""
    _, C = batter_basis(nat["sd_b"], nat["corr_chol"], center)
    out = n_batters * jnp.sum(jnp.log(jnp.diagonal(C)[1:]))
    out += n_pitchers * jnp.log(nat["sd_p"])
    if skew:
        out += n_batters * jnp.log(nat["tau"])
    return out
