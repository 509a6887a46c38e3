"""Offset regressions of swing outcomes on batter approach.

Each regression keeps the pitch-outcome model's prediction as a fixed offset
and adds an intercept plus the batter's intended change in bat speed and
swing length per strike (the instruments):

* contact, on all swings: ``logit P(contact) = logit(p_con) + a + b_bs g_bs + b_sl g_sl``
* fair, on contacted balls: same form with ``p_fair``
* xLW, on fair balls: ``xLW ~ Normal(xlw_hat + a + b_bs g_bs + b_sl g_sl, sigma^2)``

The instruments are posterior means and their uncertainty is not
propagated.  They are centered by construction of the intention model, so the
intercept is the adjustment at the average approach.  Swing length enters in
feet; :attr:`CausalFit.beta_sl_per_inch` reports it per inch.

The xLW residuals are skewed, so the Gaussian standard errors understate the
true uncertainty.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit, logit

from .gbm import clip_probability

logger = logging.getLogger(__name__)

COEF_NAMES = ("alpha", "beta_bs", "beta_sl")
TAGS = {"contact": "logit", "fair": "logit", "xLW": "identity"}
SCORE_TOL = 1e-10
MAX_ITER = 100
SEPARATION_CAP = 50.0  # |coefficient| bound reported for separated fits
JOIN_FAILURE_LIMIT = 0.01


class ConvergenceError(RuntimeError):
    """IRLS did not reach the score tolerance."""


class JoinError(ValueError):
    """Too many swing rows failed to join to predictions or approaches."""


@dataclass
class CausalFit:
    tag: str
    coef: tuple
    se: tuple
    n: int
    sigma2: float | None = None
    flags: tuple = ()
    iterations: int = 0
    max_abs_score: float = 0.0

    @property
    def link(self) -> str:
        return TAGS[self.tag]

    @property
    def alpha(self) -> float:
        return self.coef[0]

    @property
    def beta_bs(self) -> float:
        return self.coef[1]

    @property
    def beta_sl(self) -> float:
        """Per foot of intended swing length change."""
        return self.coef[2]

    @property
    def beta_sl_per_inch(self) -> float:
        return self.coef[2] / 12.0

    @property
    def se_sl_per_inch(self) -> float:
        return self.se[2] / 12.0

    def as_row(self) -> dict:
        """Table-style row: estimates and SEs, swing length per inch."""
        return {
            "model": self.tag, "n": self.n,
            "alpha": self.alpha, "alpha_se": self.se[0],
            "beta_bs": self.beta_bs, "beta_bs_se": self.se[1],
            "beta_sl_per_inch": self.beta_sl_per_inch, "beta_sl_per_inch_se": self.se_sl_per_inch,
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["coef"], d["se"], d["flags"] = list(self.coef), list(self.se), list(self.flags)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CausalFit":
        return cls(d["tag"], tuple(d["coef"]), tuple(d["se"]), int(d["n"]), d.get("sigma2"),
                   tuple(d.get("flags", ())), int(d.get("iterations", 0)), float(d.get("max_abs_score", 0.0)))


def design(instruments) -> np.ndarray:
    Z = np.asarray(instruments, dtype=float)
    if Z.ndim != 2 or Z.shape[1] != 2:
        raise ValueError("instruments must be (n, 2): bat speed and swing length approach")
    if not np.all(np.isfinite(Z)):
        raise ValueError("instruments must be finite")
    return np.column_stack([np.ones(len(Z)), Z])


def _degenerate(X) -> np.ndarray:
    # instrument columns with no variation carry no information
    out = np.zeros(X.shape[1], dtype=bool)
    out[1:] = np.ptp(X[:, 1:], axis=0) == 0
    return out


def _logistic_loglik(y, eta) -> float:
    return float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))


def fit_logistic_offset(y, offset, instruments, tag: str = "contact") -> CausalFit:
    """Maximum likelihood logistic regression with a fixed offset.

    Newton-Raphson (equivalently IRLS) with step halving.  Converged when the
    largest absolute score component is below 1e-10, or when the Newton step
    no longer moves the estimate in floating point.  Standard errors come from
    the inverse information at the optimum.

    Zero-variance instruments are dropped and reported with ``beta = 0`` and
    infinite SE (flag ``degenerate:<name>``).  Perfect separation is flagged
    and the diverging coefficients are capped.

    Raises
    ------
    ConvergenceError
        If neither criterion is met within 100 iterations.
    """
    y = np.asarray(y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    X = design(instruments)
    if y.shape != offset.shape or y.shape[0] != X.shape[0]:
        raise ValueError("y, offset and instruments must have the same length")
    if not np.all(np.isfinite(offset)):
        raise ValueError("offsets must be finite (clip probabilities first)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("y must be 0/1")
    flags = []
    deg = _degenerate(X)
    for j in np.flatnonzero(deg):
        flags.append(f"degenerate:{COEF_NAMES[j]}")
    keep = ~deg
    Xk = X[:, keep]
    beta = np.zeros(Xk.shape[1])
    eta = offset + Xk @ beta
    ll = _logistic_loglik(y, eta)
    converged = separated = False
    score = Xk.T @ (y - expit(eta))
    it = 0
    for it in range(1, MAX_ITER + 1):
        p = expit(eta)
        w = p * (1 - p)
        if np.all(np.abs(y - p) < 1e-9):
            separated = True
            break
        info = Xk.T @ (w[:, None] * Xk)
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            separated = True
            break
        t = 1.0
        while True:
            cand = beta + t * step
            eta_c = offset + Xk @ cand
            ll_c = _logistic_loglik(y, eta_c)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-10:
                break
            t /= 2
        moved = np.any(np.abs(cand - beta) > 4 * np.finfo(float).eps * (1 + np.abs(beta)))
        beta, eta, ll = cand, eta_c, ll_c
        score = Xk.T @ (y - expit(eta))
        if np.max(np.abs(score)) < SCORE_TOL or not moved:
            converged = True
            break
        if np.max(np.abs(beta)) > 1e3:
            separated = True
            break
    if separated:
        warnings.warn(f"{tag}: perfect separation; coefficients capped", stacklevel=2)
        flags.append("separation")
        beta = np.clip(beta, -SEPARATION_CAP, SEPARATION_CAP)
        eta = offset + Xk @ beta
        score = Xk.T @ (y - expit(eta))
    elif not converged:
        raise ConvergenceError(f"{tag}: no convergence in {MAX_ITER} iterations (max |score| {np.max(np.abs(score)):.3g})")
    p = expit(eta)
    info = Xk.T @ ((p * (1 - p))[:, None] * Xk)
    cov = np.linalg.pinv(info) if separated else np.linalg.inv(info)
    coef = np.zeros(3)
    se = np.full(3, np.inf)
    coef[keep] = beta
    se[keep] = np.sqrt(np.diag(cov))
    return CausalFit(tag, tuple(coef.tolist()), tuple(se.tolist()), int(y.size), None, tuple(flags), it,
                     float(np.max(np.abs(score))))


def collinear_columns(X, names=COEF_NAMES) -> list:
    """Names of the columns involved in an exact linear dependency."""
    _, sv, Vt = np.linalg.svd(X, full_matrices=False)
    tol = max(X.shape) * np.finfo(float).eps * (sv[0] if sv.size else 0.0)
    null = Vt[sv <= tol]
    if not null.size:
        return []
    involved = np.any(np.abs(null) > 1e-8, axis=0)
    return [n for n, hit in zip(names, involved) if hit]


def fit_linear_offset(y, offset, instruments, tag: str = "xLW") -> CausalFit:
    """Ordinary least squares of ``y - offset`` on the intercept and instruments.

    ``sigma2`` is the maximum-likelihood residual variance ``RSS / n`` and the
    SEs are ``sqrt(diag(sigma2 (X'X)^-1))``.

    Raises
    ------
    ValueError
        If the design is rank deficient; the message names the collinear
        columns.
    """
    y = np.asarray(y, dtype=float)
    offset = np.asarray(offset, dtype=float)
    X = design(instruments)
    if y.shape != offset.shape or y.shape[0] != X.shape[0]:
        raise ValueError("y, offset and instruments must have the same length")
    bad = collinear_columns(X)
    if bad:
        raise ValueError(f"{tag}: rank-deficient design; collinear columns {bad}")
    r = y - offset
    beta, *_ = np.linalg.lstsq(X, r, rcond=None)
    resid = r - X @ beta
    sigma2 = float(resid @ resid / y.size)
    cov = sigma2 * np.linalg.inv(X.T @ X)
    return CausalFit(tag, tuple(beta.tolist()), tuple(np.sqrt(np.diag(cov)).tolist()), int(y.size), sigma2)


@dataclass
class CausalSuite:
    fits: dict
    excluded_rows: list = field(default_factory=list)
    n_rows: int = 0

    def __getitem__(self, tag) -> CausalFit:
        return self.fits[tag]

    def table(self) -> pd.DataFrame:
        return pd.DataFrame([self.fits[t].as_row() for t in TAGS])

    def to_json(self) -> str:
        return json.dumps({"fits": {t: f.to_dict() for t, f in self.fits.items()},
                           "excluded_rows": self.excluded_rows, "n_rows": self.n_rows}, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "CausalSuite":
        d = json.loads(text)
        return cls({t: CausalFit.from_dict(f) for t, f in d["fits"].items()}, d.get("excluded_rows", []),
                   int(d.get("n_rows", 0)))

    @classmethod
    def zero(cls) -> "CausalSuite":
        """All coefficients zero (the no-adjustment reference)."""
        z = (0.0, 0.0, 0.0)
        return cls({t: CausalFit(t, z, (1.0, 1.0, 1.0), 0) for t in TAGS})


CONTACT_OUTCOMES = frozenset({"FoulBall", "FairBall"})


def fit_causal_suite(swings: pd.DataFrame, predictions: pd.DataFrame, approaches) -> CausalSuite:
    """Fit the contact, fair and xLW regressions.

    Parameters
    ----------
    swings : DataFrame
        One row per swing: ``row_id``, ``batter_id``, ``outcome``
        (SwingingStrike, FoulBall or FairBall) and ``xlw`` (observed label for
        fair balls, NaN otherwise).
    predictions : DataFrame
        ``row_id``, ``p_con``, ``p_fair``, ``xlw`` from the pitch-outcome model.
    approaches : DataFrame or sequence of BatterApproach
        ``batter_id``, ``gamma_bs`` (mph per strike), ``gamma_sl`` (feet per strike).

    Rows that do not join are excluded and listed; more than 1% is fatal.
    Fair balls without an observed label are left out of the xLW fit only.
    """
    if not isinstance(approaches, pd.DataFrame):
        approaches = pd.DataFrame([asdict(a) for a in approaches], columns=["batter_id", "gamma_bs", "gamma_sl"])
    n = len(swings)
    pred = predictions[["row_id", "p_con", "p_fair", "xlw"]].rename(columns={"xlw": "xlw_hat"})
    df = swings.merge(pred, on="row_id", how="left", validate="one_to_one")
    df = df.merge(approaches[["batter_id", "gamma_bs", "gamma_sl"]], on="batter_id", how="left", validate="many_to_one")
    bad = df[["p_con", "gamma_bs"]].isna().any(axis=1)
    excluded = df.loc[bad, "row_id"].tolist()
    if n and len(excluded) > JOIN_FAILURE_LIMIT * n:
        raise JoinError(f"{len(excluded)} of {n} swing rows failed to join (limit 1%): first ids {excluded[:10]}")
    if excluded:
        logger.warning("excluded %d swing rows without predictions or approaches", len(excluded))
    df = df.loc[~bad]
    Z = df[["gamma_bs", "gamma_sl"]].to_numpy()
    contact = df["outcome"].isin(CONTACT_OUTCOMES).to_numpy()
    fair = (df["outcome"] == "FairBall").to_numpy()
    fits = {
        "contact": fit_logistic_offset(contact.astype(float), logit(clip_probability(df["p_con"].to_numpy())),
                                       Z, "contact"),
        "fair": fit_logistic_offset(fair[contact].astype(float), logit(clip_probability(df["p_fair"].to_numpy()[contact])),
                                    Z[contact], "fair"),
    }
    labelled = fair & df["xlw"].notna().to_numpy()
    fits["xLW"] = fit_linear_offset(df["xlw"].to_numpy()[labelled], df["xlw_hat"].to_numpy()[labelled],
                                    Z[labelled], "xLW")
    return CausalSuite(fits, excluded, n)
