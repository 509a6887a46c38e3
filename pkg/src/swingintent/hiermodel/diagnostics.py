"""Split R-hat and rank-normalized bulk effective sample size.

Follows the rank-normalization recipe of Vehtari et al. (2021): split each
chain in half, replace draws by normal scores of their pooled ranks, then
apply the classic potential-scale-reduction and Geyer initial-monotone ESS
estimators to the transformed draws.
"""
from __future__ import annotations

import numpy as np
import pandas as pd
from scipy import stats


def _split(ary: np.ndarray) -> np.ndarray:
    half = ary.shape[1] // 2
    return np.vstack((ary[:, :half], ary[:, ary.shape[1] - half:]))


def _z_scale(ary: np.ndarray) -> np.ndarray:
    ranks = stats.rankdata(ary, method="average").reshape(ary.shape)
    return stats.norm.ppf((ranks - 0.375) / (ary.size + 0.25))


def _rhat(ary: np.ndarray) -> float:
    n = ary.shape[1]
    within = ary.var(axis=1, ddof=1).mean()
    between = n * ary.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * within + between / n
    return float(np.sqrt(var_plus / within))


def _is_constant(ary: np.ndarray) -> bool:
    return bool(np.all(ary == ary.flat[0]))


def split_rhat(ary) -> float:
    """Rank-normalized split R-hat for a ``(chains, draws)`` array.

    Returns NaN for a constant column.
    """
    ary = np.asarray(ary, dtype=float)
    if ary.ndim != 2 or ary.shape[0] < 2:
        raise ValueError("R-hat is undefined for fewer than 2 chains")
    if _is_constant(ary):
        return float("nan")
    split = _split(ary)
    bulk = _rhat(_z_scale(split))
    folded = np.abs(ary - np.median(ary))
    tail = _rhat(_z_scale(_split(folded))) if not _is_constant(folded) else bulk
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x - x.mean(axis=-1, keepdims=True), n=m)
    acov = np.fft.irfft(f * np.conj(f), n=m)[..., :n]
    return acov / n


def _ess(ary: np.ndarray) -> float:
    m, n = ary.shape
    acov = _autocov(ary)
    chain_mean = ary.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n + chain_mean.var(ddof=1)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even, rho_odd = 1.0, 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 2 and rho_even + rho_odd >= 0.0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        rho[t + 1] = rho_even
        if rho_even + rho_odd >= 0:
            rho[t + 2] = rho_odd
        t += 2
    max_t = t
    # initial monotone sequence
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = (rho[t - 1] + rho[t]) / 2.0
        t += 2
    tau = -1.0 + 2.0 * rho[:max_t].sum() + rho[max_t: max_t + 1].sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def bulk_ess(ary) -> float:
    """Rank-normalized bulk ESS for a ``(chains, draws)`` array.

    Returns NaN (not applicable) for a constant column.
    """
    ary = np.asarray(ary, dtype=float)
    if ary.ndim != 2:
        raise ValueError("expected a (chains, draws) array")
    if _is_constant(ary):
        return float("nan")
    return _ess(_z_scale(_split(ary)))


def diagnostics(draws, columns=None) -> pd.DataFrame:
    """Split R-hat and bulk ESS for every scalar parameter.

    Parameters
    ----------
    draws : PosteriorDraws or mapping of name -> (chains, draws) arrays
    columns : iterable of str, optional
        Restrict to these parameter names.

    Raises
    ------
    ValueError
        With a single chain, or fewer than 100 draws per chain.
    """
    cols = draws.scalar_columns() if hasattr(draws, "scalar_columns") else dict(draws)
    if columns is not None:
        cols = {k: cols[k] for k in columns}
    rows = []
    for name, ary in cols.items():
        ary = np.asarray(ary, dtype=float)
        if ary.shape[0] < 2:
            raise ValueError("R-hat is undefined for a single chain")
        if ary.shape[1] < 100:
            raise ValueError("diagnostics need at least 100 retained draws per chain")
        rows.append({"parameter": name, "rhat": split_rhat(ary), "ess_bulk": bulk_ess(ary)})
    return pd.DataFrame(rows, columns=["parameter", "rhat", "ess_bulk"])
