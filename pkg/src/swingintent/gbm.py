"""Gradient-boosted regression trees with exact greedy split search.

Second-order boosting: each round fits a tree to the gradient ``g`` and
Hessian ``h`` of the loss at the current margin, scores a split by

    gain = 1/2 [G_L^2 / (H_L + lambda) + G_R^2 / (H_R + lambda) - G^2 / (H + lambda)] - gamma

and gives each leaf the Newton weight ``-G / (H + lambda)`` scaled by ``eta``.
Trees grow level by level.  Every feature keeps its rows in sorted order,
grouped by node, so one vectorized scan per feature finds the best split of
every node on the level.

Rows go left when ``x < threshold``.  The learner rejects NaN; impute missing
values with a sentinel below the observed range (e.g. -999), which then
always takes the left branch.

The pitch-outcome components and their training subsets:

===  =========================================  ===============================
A    probability of swing                       all pitches
B    probability of HBP given no swing          takes
C    probability of contact given swing         swings
D    probability of strike given called pitch   called balls and strikes
E    probability of fair ball given contact     fouls and fair balls
F    expected xLW given fair ball               fair balls with batted-ball data
===  =========================================  ===============================
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from itertools import product
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .ingest import PITCH_FEATURES, SWINGS, Outcome, feature_matrix

logger = logging.getLogger(__name__)

REG_LAMBDA = 1.0
PROB_EPS = 1e-6
FORMAT_VERSION = 1
LOSSES = ("logistic", "squared")
# stadium-chart hit coordinates: home plate position, y grows toward the plate
HOME_PLATE_X = 125.42
HOME_PLATE_Y = 198.27
HIT_FEATURES = ("exit_speed", "launch_angle", "spray_angle")


class ConfigurationError(ValueError):
    """A component cannot be trained or evaluated as configured."""


@dataclass(frozen=True)
class TrainConfig:
    nrounds: int = 100
    eta: float = 0.3
    max_depth: int = 6
    min_child_weight: float = 1.0
    gamma: float = 0.0
    subsample: float = 0.65
    colsample_by_tree: float = 0.7
    loss: str = "logistic"
    seed: int = 0

    def __post_init__(self):
        if self.nrounds < 1:
            raise ValueError("nrounds must be >= 1")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")
        if not (0.0 < self.subsample <= 1.0 and 0.0 < self.colsample_by_tree <= 1.0):
            raise ValueError("subsample and colsample_by_tree must be in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


# tuned values per component; gamma, subsample and colsample stay at their defaults
HIT_OUTCOME_CONFIG = TrainConfig(1000, 0.05, 9, 100, loss="squared")
PITCH_OUTCOME_CONFIGS = {
    "A": TrainConfig(1500, 0.05, 9, 10),
    "B": TrainConfig(400, 0.05, 6, 10),
    "C": TrainConfig(1000, 0.01, 6, 100),
    "D": TrainConfig(2000, 0.01, 9, 10),
    "E": TrainConfig(1500, 0.01, 9, 100),
    "F": TrainConfig(1000, 0.01, 6, 100, loss="squared"),
}
COMPONENTS = tuple(PITCH_OUTCOME_CONFIGS)
SEARCH_SPACE = {
    "nrounds": (1, 2000),  # inclusive range
    "eta": (0.01, 0.05, 0.3),
    "max_depth": (3, 6, 9),
    "min_child_weight": (10, 30, 100),
}


def clip_probability(p, eps: float = PROB_EPS):
    return np.clip(p, eps, 1.0 - eps)


# --- trees -------------------------------------------------------------------


@dataclass
class Tree:
    """Flat binary tree; ``feature == -1`` marks a leaf.  Node 0 is the root."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def depth(self) -> int:
        d = np.zeros(self.n_nodes, dtype=int)
        for k in range(self.n_nodes):
            if self.feature[k] >= 0:
                d[self.left[k]] = d[self.right[k]] = d[k] + 1
        return int(d.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[idx]
            internal = f >= 0
            if not internal.any():
                break
            go_left = X[rows, np.where(internal, f, 0)] < self.threshold[idx]
            idx = np.where(internal, np.where(go_left, self.left[idx], self.right[idx]), idx)
        return self.value[idx]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value", "gain")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        ints = {"feature", "left", "right"}
        return cls(**{k: np.asarray(d[k], dtype=np.int64 if k in ints else float) for k in
                      ("feature", "threshold", "left", "right", "value", "gain")})


@dataclass
class Ensemble:
    """Boosted trees; leaf values already carry the learning rate."""

    trees: list
    base_score: float
    loss: str
    features: tuple
    config: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.features)

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features {self.features}, got shape {X.shape}")
        return X

    def margin(self, X, n_trees: int | None = None) -> np.ndarray:
        X = self._check(X)
        out = np.full(X.shape[0], self.base_score)
        for t in self.trees[:n_trees]:
            out += t.predict(X)
        return out

    def predict(self, X) -> np.ndarray:
        """Clipped probability (logistic) or value (squared), one per row."""
        m = self.margin(X)
        return clip_probability(expit(m)) if self.loss == "logistic" else m

    def feature_importance(self) -> dict:
        """Share of total split gain per feature."""
        total = np.zeros(self.n_features)
        for t in self.trees:
            internal = t.feature >= 0
            np.add.at(total, t.feature[internal], t.gain[internal])
        s = total.sum()
        share = total / s if s > 0 else total
        return dict(zip(self.features, share.tolist()))

    def to_json(self) -> str:
        return json.dumps({
            "format": "swingintent-gbm", "version": FORMAT_VERSION, "loss": self.loss,
            "base_score": self.base_score, "features": list(self.features), "config": self.config,
            "meta": self.meta, "trees": [t.to_dict() for t in self.trees],
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Ensemble":
        d = json.loads(text)
        if d.get("format") != "swingintent-gbm" or d.get("version") != FORMAT_VERSION:
            raise ValueError("not a version-1 model file")
        return cls([Tree.from_dict(t) for t in d["trees"]], float(d["base_score"]), d["loss"],
                   tuple(d["features"]), d.get("config", {}), d.get("meta", {}))

    def save(self, path):
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "Ensemble":
        return cls.from_json(Path(path).read_text())


def predict(ensemble: Ensemble, x) -> np.ndarray | float:
    """Probability (logistic) or value (squared) for one vector or a matrix."""
    x = np.asarray(x, dtype=float)
    out = ensemble.predict(x)
    return float(out[0]) if x.ndim == 1 else out


# --- training ----------------------------------------------------------------


def _grad_hess(loss: str, margin: np.ndarray, y: np.ndarray):
    if loss == "squared":
        return margin - y, np.ones_like(y)
    p = expit(margin)
    return p - y, p * (1.0 - p)


def loss_value(loss: str, margin: np.ndarray, y: np.ndarray) -> float:
    """Mean training loss: squared error or log-loss (probabilities clipped)."""
    if loss == "squared":
        return float(np.mean((margin - y) ** 2))
    p = clip_probability(expit(margin))
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


def _midpoint(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # threshold t with a < t <= b, so that "x < t" sends a left and b right
    t = a + (b - a) / 2.0
    return np.where((t > a) & (t <= b), t, b)


def _grow_tree(X, g, h, order, in_sample, cols, cfg: TrainConfig) -> Tree:
    lam = REG_LAMBDA
    node_of = np.where(in_sample, 0, -1).astype(np.int64)
    rows_sorted = {f: order[in_sample[order[:, f]], f] for f in cols}
    feature, threshold, left, right, value, gains = [-1], [0.0], [-1], [-1], [0.0], [0.0]
    level = np.array([0])  # tree ids of the nodes on the current level
    G = np.array([g[in_sample].sum()])
    H = np.array([h[in_sample].sum()])

    for depth in range(cfg.max_depth + 1):
        K = level.size
        best_gain = np.zeros(K)
        best_feat = np.full(K, -1)
        best_thr = np.zeros(K)
        best_gl = np.zeros(K)
        best_hl = np.zeros(K)
        if depth < cfg.max_depth:
            parent_score = G**2 / (H + lam)
            for f in cols:
                o = rows_sorted[f]
                if o.size < 2:
                    continue
                nid = node_of[o]
                xs = X[o, f]
                cg, ch = np.cumsum(g[o]), np.cumsum(h[o])
                counts = np.bincount(nid, minlength=K)
                starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
                GL = cg - np.concatenate(([0.0], cg))[starts][nid]
                HL = ch - np.concatenate(([0.0], ch))[starts][nid]
                GR, HR = G[nid] - GL, H[nid] - HL
                valid = np.zeros(o.size, dtype=bool)
                valid[:-1] = (nid[:-1] == nid[1:]) & (xs[:-1] < xs[1:])
                valid &= (HL >= cfg.min_child_weight) & (HR >= cfg.min_child_weight)
                if not valid.any():
                    continue
                gain = 0.5 * (GL**2 / (HL + lam) + GR**2 / (HR + lam) - parent_score[nid]) - cfg.gamma
                gain = np.where(valid, gain, -np.inf)
                nonempty = counts > 0
                mx = np.full(K, -np.inf)
                mx[nonempty] = np.maximum.reduceat(gain, starts[nonempty])
                hit = np.flatnonzero(valid & (gain == mx[nid]))
                nodes, first = np.unique(nid[hit], return_index=True)
                pos = hit[first]
                # strict comparison: on ties the earlier feature keeps the split
                better = mx[nodes] > best_gain[nodes]
                nodes, pos = nodes[better], pos[better]
                best_gain[nodes] = mx[nodes]
                best_feat[nodes] = f
                best_thr[nodes] = _midpoint(xs[pos], xs[pos + 1])
                best_gl[nodes] = GL[pos]
                best_hl[nodes] = HL[pos]

        split = best_feat >= 0
        for k in np.flatnonzero(~split):
            value[level[k]] = -G[k] / (H[k] + lam) * cfg.eta
        if not split.any():
            break
        child_pos = np.full(K, -1)
        next_level, next_G, next_H = [], [], []
        for k in np.flatnonzero(split):
            tid = level[k]
            feature[tid], threshold[tid], gains[tid] = int(best_feat[k]), float(best_thr[k]), float(best_gain[k])
            child_pos[k] = len(next_level)
            for gsum, hsum in ((best_gl[k], best_hl[k]), (G[k] - best_gl[k], H[k] - best_hl[k])):
                new = len(feature)
                feature.append(-1), threshold.append(0.0), left.append(-1), right.append(-1)
                value.append(0.0), gains.append(0.0)
                next_level.append(new)
                next_G.append(gsum)
                next_H.append(hsum)
            left[tid], right[tid] = next_level[-2], next_level[-1]

        active = np.flatnonzero(node_of >= 0)
        k_of = node_of[active]
        go_right = X[active, best_feat[k_of].clip(0)] >= best_thr[k_of]
        new_pos = np.where(split[k_of], child_pos[k_of] + go_right, -1)
        node_of[active] = new_pos
        for f in cols:
            o = rows_sorted[f]
            o = o[node_of[o] >= 0]
            # 16-bit keys take numpy's radix path; within-node feature order is kept
            rows_sorted[f] = o[np.argsort(node_of[o].astype(np.int16), kind="stable")]
        level = np.asarray(next_level)
        G, H = np.asarray(next_G), np.asarray(next_H)

    return Tree(
        np.asarray(feature, dtype=np.int64), np.asarray(threshold), np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64), np.asarray(value), np.asarray(gains),
    )


def base_score(loss: str, y: np.ndarray) -> float:
    if y.size == 0:
        return 0.0
    if loss == "squared":
        return float(np.mean(y))
    return float(logit(clip_probability(np.mean(y))))


def train(X, y, config: TrainConfig = TrainConfig(), features=None, callback=None) -> Ensemble:
    """Fit a boosted ensemble.

    Parameters
    ----------
    X : (n, p) array
        Features, no NaN.
    y : (n,) array
        Labels in {0, 1} for logistic loss, reals for squared loss.
    config : TrainConfig
    features : sequence of str, optional
        Column names stored with the model (the CSV column contract).
    callback : callable, optional
        Called as ``callback(round, margin)`` after every round.

    Single-class logistic labels give a base-score-only ensemble and a warning.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError("X must be (n, p) and y (n,)")
    if not np.all(np.isfinite(X)):
        raise ValueError("features contain NaN/inf; impute with a sentinel first")
    if config.loss == "logistic" and not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic labels must be 0/1")
    features = tuple(features) if features is not None else tuple(f"f{j}" for j in range(X.shape[1]))
    if len(features) != X.shape[1]:
        raise ValueError("feature names do not match X")
    ens = Ensemble([], base_score(config.loss, y), config.loss, features, asdict(config))
    if X.shape[0] == 0:
        raise ValueError("empty training set")
    if config.loss == "logistic" and np.unique(y).size < 2:
        warnings.warn("single-class labels: returning a base-score-only ensemble", stacklevel=2)
        return ens

    rng = np.random.default_rng(config.seed)
    n, p = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    n_cols = max(1, int(config.colsample_by_tree * p))
    margin = np.full(n, ens.base_score)
    everyone = np.ones(n, dtype=bool)
    for r in range(config.nrounds):
        g, h = _grad_hess(config.loss, margin, y)
        in_sample = rng.random(n) < config.subsample if config.subsample < 1.0 else everyone
        cols = np.sort(rng.choice(p, n_cols, replace=False)) if n_cols < p else np.arange(p)
        tree = _grow_tree(X, g, h, order, in_sample, cols, config)
        ens.trees.append(tree)
        margin += tree.predict(X)
        if callback is not None:
            callback(r, margin)
    return ens


# --- hit and pitch outcome models ---------------------------------------------


def spray_angle(hit_x, hit_y, batter_side):
    """Horizontal exit angle in degrees from straight-away center field,
    positive toward the batter's pull side (left field for a right-handed
    batter)."""
    hit_x, hit_y = np.asarray(hit_x, dtype=float), np.asarray(hit_y, dtype=float)
    toward_right_field = np.degrees(np.arctan2(hit_x - HOME_PLATE_X, HOME_PLATE_Y - hit_y))
    sign = np.where(np.asarray(batter_side) == "L", 1.0, -1.0)
    return sign * toward_right_field


def hit_coordinates(spray_deg, distance, batter_side):
    """Inverse of :func:`spray_angle` for a given chart distance."""
    sign = np.where(np.asarray(batter_side) == "L", 1.0, -1.0)
    a = np.radians(sign * np.asarray(spray_deg, dtype=float))
    return HOME_PLATE_X + distance * np.sin(a), HOME_PLATE_Y - distance * np.cos(a)


def has_batted_ball(r) -> bool:
    return r.exit_speed is not None and r.launch_angle is not None and r.hit_x is not None and r.hit_y is not None


def hit_feature_matrix(records) -> np.ndarray:
    records = list(records)
    if not records:
        return np.zeros((0, 3))
    ev = np.array([r.exit_speed for r in records], dtype=float)
    la = np.array([r.launch_angle for r in records], dtype=float)
    spray = spray_angle([r.hit_x for r in records], [r.hit_y for r in records], [r.batter_side for r in records])
    return np.column_stack([ev, la, spray])


def train_hit_outcome(batted_balls, labels, config: TrainConfig = HIT_OUTCOME_CONFIG) -> Ensemble:
    """Squared-loss model of the run-expectancy change of a batted ball.

    ``batted_balls`` is either a sequence of records with exit speed, launch
    angle and hit coordinates, or an ``(n, 3)`` array already in
    ``HIT_FEATURES`` order.
    """
    X = np.asarray(batted_balls, dtype=float) if isinstance(batted_balls, np.ndarray) else hit_feature_matrix(batted_balls)
    return train(X, labels, config.with_(loss="squared"), features=HIT_FEATURES)


def component_subsets(records, hit_model: Ensemble | None = None) -> dict:
    """``{component: (row indices, labels)}`` following the outcome tree."""
    records = list(records)
    oc = [r.outcome for r in records]
    idx = np.arange(len(records))
    swing = np.array([o in SWINGS for o in oc], dtype=bool)
    contact = np.array([o in (Outcome.FoulBall, Outcome.FairBall) for o in oc], dtype=bool)
    called = np.array([o in (Outcome.CalledBall, Outcome.CalledStrike) for o in oc], dtype=bool)
    fair = np.array([o is Outcome.FairBall for o in oc], dtype=bool)
    out = {
        "A": (idx, swing.astype(float)),
        "B": (idx[~swing], np.array([oc[i] is Outcome.HBP for i in idx[~swing]], dtype=float)),
        "C": (idx[swing], contact[swing].astype(float)),
        "D": (idx[called], np.array([oc[i] is Outcome.CalledStrike for i in idx[called]], dtype=float)),
        "E": (idx[contact], fair[contact].astype(float)),
    }
    if hit_model is not None:
        f_idx = np.array([i for i in idx[fair] if has_batted_ball(records[i])], dtype=np.int64)
        labels = hit_model.predict(hit_feature_matrix([records[i] for i in f_idx])) if f_idx.size else np.zeros(0)
        out["F"] = (f_idx, labels)
    return out


@dataclass
class PitchOutcomeModels:
    """The six components; ``components(X)`` evaluates all of them."""

    ensembles: dict

    def components(self, X) -> dict:
        missing = [c for c in COMPONENTS if c not in self.ensembles]
        if missing:
            raise ConfigurationError(f"missing pitch outcome components {missing}")
        e = self.ensembles
        return {
            "p_swing": e["A"].predict(X), "p_hbp": e["B"].predict(X), "p_con": e["C"].predict(X),
            "p_strike": e["D"].predict(X), "p_fair": e["E"].predict(X), "xlw": e["F"].predict(X),
        }

    def predictions(self, records, ids=None) -> pd.DataFrame:
        """One row of component predictions per pitch (``PitchOutcomePredictions``)."""
        X = feature_matrix(records)
        df = pd.DataFrame(self.components(X))
        df.insert(0, "row_id", np.arange(len(df)) if ids is None else list(ids))
        return df

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for k, ens in self.ensembles.items():
            ens.save(d / f"component_{k}.json")

    @classmethod
    def load(cls, directory) -> "PitchOutcomeModels":
        d = Path(directory)
        return cls({k: Ensemble.load(d / f"component_{k}.json") for k in COMPONENTS})


def train_pitch_outcome(records, hit_model: Ensemble, configs: dict | None = None, seed: int = 0) -> PitchOutcomeModels:
    """Train components A-F on the 14 pitch features.

    Raises
    ------
    ConfigurationError
        If a component's conditional training subset is empty.
    """
    records = list(records)
    configs = {**PITCH_OUTCOME_CONFIGS, **(configs or {})}
    X = feature_matrix(records)
    subsets = component_subsets(records, hit_model)
    out = {}
    for k in COMPONENTS:
        idx, labels = subsets[k]
        if idx.size == 0:
            raise ConfigurationError(f"component {k}: empty training subset")
        loss = "squared" if k == "F" else "logistic"
        cfg = configs[k].with_(loss=loss, seed=seed + COMPONENTS.index(k))
        logger.info("training component %s on %d rows", k, idx.size)
        out[k] = train(X[idx], labels, cfg, features=PITCH_FEATURES)
    return PitchOutcomeModels(out)


# --- cross-validation ------------------------------------------------------------


def fold_assignment(n: int, folds: int = 5, seed: int = 0) -> np.ndarray:
    perm = np.random.default_rng(seed).permutation(n)
    out = np.empty(n, dtype=np.int64)
    out[perm] = np.arange(n) % folds
    return out


def expand_grid(nrounds, eta, max_depth, min_child_weight, base: TrainConfig = TrainConfig()) -> list:
    return [base.with_(nrounds=int(r), eta=float(e), max_depth=int(d), min_child_weight=float(m))
            for r, e, d, m in product(nrounds, eta, max_depth, min_child_weight)]


def in_search_space(cfg: TrainConfig) -> bool:
    s = SEARCH_SPACE
    return (s["nrounds"][0] <= cfg.nrounds <= s["nrounds"][1] and cfg.eta in s["eta"]
            and cfg.max_depth in s["max_depth"] and cfg.min_child_weight in s["min_child_weight"])


def cross_validate(X, y, grid, folds: int = 5, seed: int = 0, features=None):
    """Pick the config with the lowest mean validation loss.

    Configs that differ only in ``nrounds`` share one fit per fold (staged
    predictions).  Ties go to fewer rounds, then shallower trees.

    Returns
    -------
    best : TrainConfig
    table : pandas.DataFrame
        Mean validation loss of every config.
    """
    X, y = np.asarray(X, dtype=float), np.asarray(y, dtype=float)
    grid = list(grid)
    if not grid:
        raise ValueError("empty grid")
    fold = fold_assignment(len(y), folds, seed)
    groups: dict = {}
    for cfg in grid:
        groups.setdefault(replace(cfg, nrounds=1), []).append(cfg.nrounds)
    rows = []
    for key, rounds in groups.items():
        top = max(rounds)
        wanted = set(rounds)
        losses = {r: [] for r in wanted}
        for k in range(folds):
            tr, va = fold != k, fold == k
            ens = train(X[tr], y[tr], replace(key, nrounds=top), features)
            m = np.full(int(va.sum()), ens.base_score)
            for r, t in enumerate(ens.trees, start=1):
                m += t.predict(X[va])
                if r in wanted:
                    losses[r].append(loss_value(key.loss, m, y[va]))
            for r in wanted:
                # single-class folds stop early at the base score
                if len(losses[r]) < k + 1:
                    losses[r].append(loss_value(key.loss, m, y[va]))
        for r in rounds:
            rows.append({**asdict(replace(key, nrounds=r)), "cv_loss": float(np.mean(losses[r]))})
    table = pd.DataFrame(rows).sort_values(["cv_loss", "nrounds", "max_depth"], kind="stable").reset_index(drop=True)
    best = table.iloc[0]
    return TrainConfig(**{k: best[k].item() if hasattr(best[k], "item") else best[k] for k in asdict(grid[0])}), table
