"""Held-out ELPD, model comparison, point predictions and batter approaches.

Everything here works on :class:`~.sampler.PosteriorDraws` in plain numpy;
the JAX model code is only needed for sampling.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .. import skewnorm
from .model import IntentionData
from .sampler import PosteriorDraws


@dataclass(frozen=True)
class ElpdResult:
    """Held-out ELPD with its pointwise terms.

    ``se = sqrt(n * Var(pointwise))`` with the sample variance (ddof=1), the
    usual standard error of a sum of ``n`` exchangeable terms.
    """

    elpd: float
    se: float
    pointwise: np.ndarray

    @property
    def n(self) -> int:
        return int(self.pointwise.size)


@dataclass(frozen=True)
class ElpdComparison:
    delta: float
    se: float


@dataclass(frozen=True)
class BatterApproach:
    """Posterior-mean strike slopes of one batter in both intention models."""

    batter_id: str
    gamma_bs: float  # mph per strike
    gamma_sl: float  # feet per strike


def encode_for(draws: PosteriorDraws, data) -> IntentionData:
    """Re-code ``data`` (observations or :class:`IntentionData`) into the id
    space of ``draws``; ids the fit never saw get code -1."""
    if isinstance(data, IntentionData):
        bmap = {b: i for i, b in enumerate(draws.batter_ids)}
        pmap = {p: i for i, p in enumerate(draws.pitcher_ids)}
        bcode = np.array([bmap.get(data.batter_ids[c], -1) if c >= 0 else -1 for c in data.batter], dtype=np.int64)
        pcode = np.array([pmap.get(data.pitcher_ids[c], -1) if c >= 0 else -1 for c in data.pitcher], dtype=np.int64)
        return IntentionData(
            y=data.y, balls=data.balls, strikes=data.strikes, loc_x=data.loc_x, loc_z=data.loc_z,
            batter=bcode, pitcher=pcode, batter_ids=draws.batter_ids, pitcher_ids=draws.pitcher_ids,
        )
    return IntentionData.from_observations(list(data), draws.batter_ids, draws.pitcher_ids)


def _rows(table: np.ndarray, codes: np.ndarray) -> np.ndarray:
    # table (..., m, k) or (..., m); code -1 -> zeros
    pad_shape = table.shape[:-2] + (1, table.shape[-1]) if table.ndim >= 3 else table.shape[:-1] + (1,)
    axis = -2 if table.ndim >= 3 else -1
    ext = np.concatenate([table, np.zeros(pad_shape)], axis=axis)
    idx = np.where(codes < 0, table.shape[axis], codes)
    return np.take(ext, idx, axis=axis)


def _assemble(params: dict, data: IntentionData):
    """Means and shapes per observation; leading axes of ``params`` broadcast."""
    X = data.covariates()
    beta = np.asarray(params["beta"])
    gb = _rows(np.asarray(params["gamma_b"]), data.batter)  # (..., n, 4)
    gp = _rows(np.asarray(params["gamma_p"]), data.pitcher)  # (..., n)
    nu = _rows(np.asarray(params["nu"]), data.batter)
    mu0 = np.asarray(params["mu0"])[..., None]
    mu = mu0 + gp + gb[..., 0] + np.einsum("...k,nk->...n", beta, X) + np.sum(gb[..., 1:] * X[:, 1:], axis=-1)
    alpha = np.asarray(params["alpha0"])[..., None] + nu
    return mu, alpha


def pointwise_loglik_draws(draws: PosteriorDraws, data: IntentionData, max_cells: int = 2_000_000) -> np.ndarray:
    """Log-likelihood of every observation under every draw, ``(S, n)``.

    Draws are flattened chain-major.  ``data`` must already be coded against
    ``draws`` (see :func:`encode_for`).
    """
    s = draws.samples
    S = draws.chains * draws.n_draws
    flat = {k: v.reshape((S,) + v.shape[2:]) for k, v in s.items()}
    out = np.empty((S, data.n))
    step = max(1, max_cells // max(data.n, 1))
    for a in range(0, S, step):
        part = {k: v[a:a + step] for k, v in flat.items()}
        mu, alpha = _assemble(part, data)
        sigma = part["sigma"][:, None]
        xi = skewnorm.mean_to_location(mu, sigma, alpha)
        z = (data.y[None, :] - xi) / sigma
        out[a:a + step] = (
            skewnorm.LOG_2 - np.log(sigma) - skewnorm.HALF_LOG_2PI - 0.5 * z**2 + skewnorm.log_norm_cdf(alpha * z)
        )
    return out


def _sum_se(pointwise: np.ndarray) -> float:
    n = pointwise.size
    if n < 2:
        return 0.0
    return float(np.sqrt(n * np.var(pointwise, ddof=1)))


def elpd_heldout(draws: PosteriorDraws, heldout) -> ElpdResult:
    """Expected log pointwise predictive density on held-out swings.

    Each pointwise term is the log of the posterior-averaged density,
    ``log mean_s p(y_i | theta_s)``.  Batters and pitchers absent from the
    fit get population effects (zero random effects, shape ``alpha0``).

    Raises
    ------
    ValueError
        On an empty held-out set.
    """
    data = encode_for(draws, heldout)
    if data.n == 0:
        raise ValueError("empty held-out set")
    ll = pointwise_loglik_draws(draws, data)
    pw = logsumexp(ll, axis=0) - np.log(ll.shape[0])
    return ElpdResult(float(pw.sum()), _sum_se(pw), pw)


def compare(a: ElpdResult, b: ElpdResult) -> ElpdComparison:
    """``elpd(a) - elpd(b)`` with the se of the pointwise difference sum."""
    if a.n != b.n:
        raise ValueError("ELPD results cover different observation sets")
    diff = a.pointwise - b.pointwise
    return ElpdComparison(float(diff.sum()), _sum_se(diff))


def train_test_split(n: int, test_fraction: float = 0.2, seed: int = 0):
    """Seeded swing-level split; returns ``(train_idx, test_idx)`` sorted."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must be in (0, 1)")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = int(round(test_fraction * n))
    return np.sort(perm[n_test:]), np.sort(perm[:n_test])


def point_estimate(draws: PosteriorDraws) -> dict:
    """Posterior means of every parameter plus the id tables."""
    est = draws.posterior_mean()
    est["batter_ids"] = draws.batter_ids
    est["pitcher_ids"] = draws.pitcher_ids
    return est


def predict_intended(source, balls, strikes, loc_x, loc_z, batter=None, pitcher=None) -> skewnorm.SkewNormalParams:
    """Skew-normal for the intended response in one context.

    Parameters
    ----------
    source : PosteriorDraws or dict
        Draws (their posterior means are plugged in) or a point estimate as
        returned by :func:`point_estimate`.
    batter, pitcher : id or None
        Unknown or ``None`` ids get population effects.
    """
    est = point_estimate(source) if isinstance(source, PosteriorDraws) else source
    bids = list(est.get("batter_ids", ()))
    pids = list(est.get("pitcher_ids", ()))
    b = bids.index(batter) if batter in bids else -1
    p = pids.index(pitcher) if pitcher in pids else -1
    x = np.array([balls, strikes, loc_x, loc_z], dtype=float)
    mu = float(est["mu0"]) + float(np.asarray(est["beta"]) @ x)
    alpha = float(est["alpha0"])
    if b >= 0:
        g = np.asarray(est["gamma_b"])[b]
        mu += float(g[0] + g[1:] @ x[1:])
        alpha += float(np.asarray(est["nu"])[b])
    if p >= 0:
        mu += float(np.asarray(est["gamma_p"])[p])
    return skewnorm.SkewNormalParams.from_mean(mu, float(est["sigma"]), alpha)


def batter_approaches(bat_speed: PosteriorDraws, swing_length: PosteriorDraws) -> list:
    """Posterior-mean strike slopes for batters present in both fits,
    in the bat-speed fit's batter order."""
    gs_bs = bat_speed.samples["gamma_b"][..., 1].mean(axis=(0, 1))
    gs_sl = swing_length.samples["gamma_b"][..., 1].mean(axis=(0, 1))
    sl_index = {b: i for i, b in enumerate(swing_length.batter_ids)}
    return [
        BatterApproach(str(b), float(gs_bs[i]), float(gs_sl[sl_index[b]]))
        for i, b in enumerate(bat_speed.batter_ids)
        if b in sl_index
    ]
