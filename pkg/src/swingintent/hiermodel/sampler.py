"""Posterior sampling for the intention model.

NUTS (multinomial trajectory sampling, dual-averaging step size, diagonal
mass matrix adapted in warmup) comes from numpyro and runs on the potential
``-log_posterior`` defined in :mod:`.model`; the model itself never goes
through numpyro's modeling primitives.
"""
from __future__ import annotations

import hashlib
import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field

import jax
import jax.numpy as jnp
import numpy as np
from scipy import stats

from .. import skewnorm
from .model import (
    FIXED_NAMES,
    N_RE,
    IntentionData,
    Layout,
    PriorConfig,
    make_log_posterior,
    natural_params,
)

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 0.05


class FitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    # early warmup with an unadapted mass matrix otherwise builds 2^10-step trees
    warmup_tree_depth: int = 5

    @classmethod
    def full_bat_speed(cls, seed=0):
        return cls(chains=4, warmup=2000, draws=2000, seed=seed)

    @classmethod
    def full_swing_length(cls, seed=0):
        return cls(chains=4, warmup=3000, draws=3000, seed=seed)


@dataclass
class PosteriorDraws:
    """Constrained posterior draws, every array shaped ``(chains, draws, ...)``.

    Keys of ``samples``: ``mu0``, ``beta`` (..., 4), ``alpha0``, ``sigma``,
    ``sd_p``, ``sd_b`` (..., 4), ``corr`` (..., 4, 4), ``tau``,
    ``gamma_b`` (..., n_batters, 4), ``nu`` (..., n_batters),
    ``gamma_p`` (..., n_pitchers).
    """

    samples: dict
    batter_ids: tuple
    pitcher_ids: tuple
    skew: bool
    step_sizes: np.ndarray = field(default_factory=lambda: np.zeros(0))
    divergences: int = 0
    flags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def chains(self) -> int:
        return int(self.samples["mu0"].shape[0])

    @property
    def n_draws(self) -> int:
        return int(self.samples["mu0"].shape[1])

    @property
    def flagged(self) -> bool:
        return bool(self.flags)

    def posterior_mean(self) -> dict:
        return {k: v.mean(axis=(0, 1)) for k, v in self.samples.items()}

    def scalar_columns(self) -> dict:
        """Every scalar parameter as a ``(chains, draws)`` array, keyed by name."""
        out = {}
        s = self.samples
        out["mu0"] = s["mu0"]
        for k, name in enumerate(FIXED_NAMES[1:]):
            out[name] = s["beta"][..., k]
        if self.skew:
            out["alpha0"] = s["alpha0"]
        out["sigma"] = s["sigma"]
        out["sd_p"] = s["sd_p"]
        for k, name in enumerate(("sd_b", "sd_b_strikes", "sd_b_x", "sd_b_z")):
            out[name] = s["sd_b"][..., k]
        for i in range(N_RE):
            for j in range(i):
                out[f"corr[{i},{j}]"] = s["corr"][..., i, j]
        if self.skew:
            out["tau"] = s["tau"]
        for b, bid in enumerate(self.batter_ids):
            for k, re in enumerate(("intercept", "strikes", "x", "z")):
                out[f"gamma_b[{bid}][{re}]"] = s["gamma_b"][..., b, k]
            if self.skew:
                out[f"nu[{bid}]"] = s["nu"][..., b]
        for p, pid in enumerate(self.pitcher_ids):
            out[f"gamma_p[{pid}]"] = s["gamma_p"][..., p]
        return out

    def fixed_effect_columns(self) -> dict:
        names = set(FIXED_NAMES) | {"alpha0", "sigma"}
        return {k: v for k, v in self.scalar_columns().items() if k in names}

    # --- persistence ------------------------------------------------------

    MAGIC = b"SIDRAWS1"

    def save(self, path, header_extra=None):
        """Write draws as: magic, u64 header length, JSON header, float64 LE data.

        The data block is a ``(chains, draws, n_columns)`` C-order array whose
        column names are listed in the header.
        """
        cols = self.scalar_columns()
        names = list(cols)
        arr = np.stack([cols[n] for n in names], axis=-1).astype("<f8")
        header = {
            "columns": names,
            "shape": list(arr.shape),
            "batter_ids": [str(b) for b in self.batter_ids],
            "pitcher_ids": [str(p) for p in self.pitcher_ids],
            "skew": self.skew,
            "step_sizes": [float(x) for x in self.step_sizes],
            "divergences": int(self.divergences),
            "flags": list(self.flags),
            "meta": self.meta,
        }
        if header_extra:
            header.update(header_extra)
        hbytes = json.dumps(header, sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(self.MAGIC)
            fh.write(struct.pack("<Q", len(hbytes)))
            fh.write(hbytes)
            fh.write(arr.tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "PosteriorDraws":
        with open(path, "rb") as fh:
            if fh.read(8) != cls.MAGIC:
                raise ValueError(f"{path}: not a draws file")
            (hlen,) = struct.unpack("<Q", fh.read(8))
            header = json.loads(fh.read(hlen))
            arr = np.frombuffer(fh.read(), dtype="<f8").reshape(header["shape"])
        col = {n: arr[..., i] for i, n in enumerate(header["columns"])}
        skew = header["skew"]
        bids, pids = tuple(header["batter_ids"]), tuple(header["pitcher_ids"])
        C, D = arr.shape[:2]
        s = {
            "mu0": col["mu0"],
            "beta": np.stack([col[n] for n in FIXED_NAMES[1:]], axis=-1),
            "alpha0": col["alpha0"] if skew else np.zeros((C, D)),
            "sigma": col["sigma"],
            "sd_p": col["sd_p"],
            "sd_b": np.stack([col[n] for n in ("sd_b", "sd_b_strikes", "sd_b_x", "sd_b_z")], axis=-1),
            "tau": col["tau"] if skew else np.zeros((C, D)),
        }
        corr = np.broadcast_to(np.eye(N_RE), (C, D, N_RE, N_RE)).copy()
        for i in range(N_RE):
            for j in range(i):
                corr[..., i, j] = corr[..., j, i] = col[f"corr[{i},{j}]"]
        s["corr"] = corr
        re = ("intercept", "strikes", "x", "z")
        s["gamma_b"] = np.stack(
            [np.stack([col[f"gamma_b[{b}][{k}]"] for k in re], axis=-1) for b in bids], axis=-2
        ) if bids else np.zeros((C, D, 0, N_RE))
        s["nu"] = (
            np.stack([col[f"nu[{b}]"] for b in bids], axis=-1)
            if skew and bids else np.zeros((C, D, len(bids)))
        )
        s["gamma_p"] = np.stack([col[f"gamma_p[{p}]"] for p in pids], axis=-1) if pids else np.zeros((C, D, 0))
        return cls(
            samples=s, batter_ids=bids, pitcher_ids=pids, skew=skew,
            step_sizes=np.asarray(header["step_sizes"]), divergences=header["divergences"],
            flags=header["flags"], meta=header["meta"],
        )


def _moment_shape(data: IntentionData) -> float:
    """Skew-normal shape matching the skewness of within-batter OLS residuals."""
    if data.n < 10 or not np.std(data.y) > 0:
        return 0.0
    dummies = np.zeros((data.n, data.n_batters))
    dummies[np.arange(data.n), data.batter] = 1.0
    X = np.column_stack([dummies, data.covariates()])
    coef, *_ = np.linalg.lstsq(X, data.y, rcond=None)
    resid = data.y - X @ coef
    return float(skewnorm.shape_from_skewness(stats.skew(resid)))


def _initial_points(data: IntentionData, layout: Layout, rng: np.random.Generator, chains: int):
    """Dispersed starting points around crude data-based values.

    The shape intercept starts at its moment estimate and the shape sd small:
    started near zero skew, some batters can settle on the wrong skew sign
    (a separate local mode) during early warmup.
    """
    y = data.y
    sd = float(np.std(y)) if data.n > 1 and np.std(y) > 0 else 1.0
    alpha_mom = _moment_shape(data) if layout.skew else 0.0
    inits = []
    for _ in range(chains):
        theta = rng.uniform(-0.5, 0.5, size=layout.size)
        u = layout.unpack(theta)
        u["fixed"] = np.concatenate([[float(np.mean(y)) + 0.1 * sd * rng.standard_normal()], 0.1 * sd * rng.standard_normal(4)])
        u["z_b"] = np.asarray(u["z_b"]).copy()
        u["z_b"][:, 0] = u["fixed"][0] + 0.1 * sd * rng.standard_normal(layout.n_batters)
        u["log_sigma"] = np.log(0.5 * sd) + rng.uniform(-0.5, 0.5)
        u["log_sd_p"] = np.log(0.2 * sd) + rng.uniform(-0.5, 0.5)
        u["log_sd_b"] = np.log(0.2 * sd) + rng.uniform(-0.5, 0.5, size=N_RE)
        if layout.skew:
            u["alpha0"] = alpha_mom + rng.uniform(-0.5, 0.5)
            u["log_tau"] = np.log(0.2) + rng.uniform(-0.5, 0.5)
        inits.append(np.asarray(layout.pack(u)))
    return np.stack(inits)


def constrain(theta_draws, layout: Layout) -> dict:
    """Map ``(chains, draws, size)`` unconstrained draws to natural parameters."""
    nat = jax.jit(jax.vmap(jax.vmap(lambda t: natural_params(t, layout))))(jnp.asarray(theta_draws))
    L = nat.pop("corr_chol")
    R = np.tril(np.asarray(jnp.einsum("...ij,...kj->...ik", L, L)), -1)
    # exact symmetry and unit diagonal, so the draws file round-trips bit for bit
    nat["corr"] = R + np.swapaxes(R, -1, -2) + np.eye(N_RE)
    return {k: np.asarray(v) for k, v in nat.items()}


def model_hash(data: IntentionData, layout: Layout, priors: PriorConfig) -> str:
    h = hashlib.sha256()
    for arr in (data.y, data.balls, data.strikes, data.loc_x, data.loc_z, data.batter, data.pitcher):
        h.update(np.ascontiguousarray(arr).tobytes())
    h.update(json.dumps([layout.n_batters, layout.n_pitchers, layout.skew, list(layout.center), asdict(priors)], sort_keys=True).encode())
    return h.hexdigest()[:16]


def sample_posterior(
    data: IntentionData,
    config: SamplerConfig | None = None,
    skew: bool = True,
    priors: PriorConfig | None = None,
) -> PosteriorDraws:
    """Run NUTS on the intention model.

    Raises
    ------
    ValueError
        If the data hold fewer than 2 batters or 2 pitchers.
    """
    from numpyro.infer import MCMC, NUTS

    config = config or SamplerConfig()
    if data.n_batters < 2 or data.n_pitchers < 2:
        raise ValueError("sampling needs at least 2 batters and 2 pitchers")
    if data.n == 0:
        raise ValueError("empty intention dataset")
    flags = []
    if not np.std(data.y) > 0:
        flags.append("degenerate-response: zero variance")
    priors = (priors or PriorConfig()).resolve(data.y)
    layout = Layout.for_data(data, skew=skew)
    logp = make_log_posterior(data, layout, priors)

    def potential(theta):
        return -logp(theta)

    rng = np.random.default_rng(config.seed)
    init = _initial_points(data, layout, rng, config.chains)
    kernel = NUTS(
        potential_fn=potential,
        target_accept_prob=config.target_accept,
        max_tree_depth=(min(config.warmup_tree_depth, config.max_tree_depth), config.max_tree_depth),
        dense_mass=False,
    )
    # one single-chain MCMC object reused across chains keeps its compiled
    # kernel; numpyro's own sequential mode recompiles for every chain
    mcmc = MCMC(kernel, num_warmup=config.warmup, num_samples=config.draws, num_chains=1, progress_bar=False)
    keys = jax.random.split(jax.random.PRNGKey(config.seed), config.chains)
    thetas, divs, steps = [], [], []
    for c in range(config.chains):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            mcmc.run(keys[c], init_params=jnp.asarray(init[c]), extra_fields=("diverging",))
        thetas.append(np.asarray(mcmc.get_samples()))
        divs.append(np.asarray(mcmc.get_extra_fields()["diverging"]))
        steps.append(float(mcmc.last_state.adapt_state.step_size))
        logger.debug("chain %d done, step size %.4g", c, steps[-1])
    theta = np.stack(thetas)
    diverging = np.stack(divs)
    n_div = int(diverging.sum())
    if n_div > DIVERGENCE_LIMIT * diverging.size:
        flags.append(f"divergences: {n_div}/{diverging.size} post-warmup transitions")
    if not np.all(np.isfinite(theta)):
        flags.append("non-finite draws")
        theta = np.nan_to_num(theta)
    step = np.asarray(steps)
    samples = constrain(theta, layout)
    draws = PosteriorDraws(
        samples=samples,
        batter_ids=data.batter_ids,
        pitcher_ids=data.pitcher_ids,
        skew=skew,
        step_sizes=step,
        divergences=n_div,
        flags=flags,
        meta={"model_hash": model_hash(data, layout, priors), "config": asdict(config), "priors": asdict(priors)},
    )
    for f in flags:
        warnings.warn(f"intention fit flagged: {f}", FitWarning, stacklevel=2)
    return draws
