"""Random survival forest with log-rank splitting and Nelson-Aalen leaves.

Trees are grown on bootstrap resamples of augmented rows. Each node draws
``mtry`` candidate features without replacement and takes the
(feature, midpoint threshold) pair with the largest log-rank statistic;
rows with ``x <= threshold`` go left. Risk is the ensemble mortality: the
ensemble cumulative hazard summed over the training event-time grid.

Depth counts node levels, so ``max_depth=1`` is a single root leaf.
"""
from __future__ import annotations

import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .cohort import FEATURES, AugmentedRow, EventType
from .errors import DataError

FORMAT_VERSION = 1


@dataclass(frozen=True)
class RSFConfig:
    n_estimators: int = 100
    min_samples_split: int = 20
    max_depth: int | None = 9
    mtry: int | None = None  # default ceil(sqrt(p))
    min_samples_leaf: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.min_samples_split < 2:
            raise ValueError("min_samples_split must be >= 2")
        if self.max_depth is not None and self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolved_mtry(self, p: int) -> int:
        m = math.ceil(math.sqrt(p)) if self.mtry is None else self.mtry
        if not 1 <= m <= p:
            raise ValueError(f"mtry must lie in [1, {p}], got {m}")
        return m


RSF_GRID: tuple[RSFConfig, ...] = tuple(
    RSFConfig(n_estimators=500, min_samples_split=s, max_depth=d) for s in (5, 13, 20) for d in (3, 6, 9)
)


def logrank_statistic(left, right) -> float:
    """Two-group log-rank chi-square (O - E)^2 / V with hypergeometric variance.

    ``left`` and ``right`` are ``(times, events)`` pairs.
    """
    tl, el = (np.asarray(a) for a in left)
    tr, er = (np.asarray(a) for a in right)
    if len(tl) == 0 or len(tr) == 0:
        raise ValueError("both groups must be non-empty")
    el, er = el.astype(bool), er.astype(bool)
    t = np.concatenate([tl, tr]).astype(float)
    e = np.concatenate([el, er])
    in_left = np.concatenate([np.ones(len(tl), bool), np.zeros(len(tr), bool)])
    if not e.any():
        warnings.warn("log-rank statistic with no events is 0", stacklevel=2)
        return 0.0
    o_minus_e = 0.0
    var = 0.0
    for tk in np.unique(t[e]):
        at_risk = t >= tk
        dead = e & (t == tk)
        Y, YL = at_risk.sum(), (at_risk & in_left).sum()
        D, DL = dead.sum(), (dead & in_left).sum()
        o_minus_e += DL - D * YL / Y
        if Y > 1:
            var += D * (YL / Y) * (1 - YL / Y) * (Y - D) / (Y - 1)
    return float(o_minus_e**2 / var) if var > 0 else 0.0


def nelson_aalen(time, event) -> tuple[np.ndarray, np.ndarray]:
    """Jump times and cumulative hazard of the Nelson-Aalen estimator."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    times = np.unique(time[event])
    if times.size == 0:
        return times, np.zeros(0)
    sorted_t = np.sort(time)
    at_risk = len(time) - np.searchsorted(sorted_t, times, side="left")
    deaths = np.bincount(np.searchsorted(times, time[event]), minlength=len(times))
    return times, np.cumsum(deaths / at_risk)


def _step_on_grid(times, chf, grid) -> np.ndarray:
    idx = np.searchsorted(times, grid, side="right")
    return np.concatenate([[0.0], chf])[idx]


@dataclass
class SurvivalTree:
    """Flat binary tree; ``left[i] == -1`` marks a leaf whose id is ``leaf[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    leaf_times: list[np.ndarray]
    leaf_chf: list[np.ndarray]
    leaf_mortality: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf id reached by each row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.left[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.left[node] >= 0
        return self.leaf[node]

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_chf)

    def to_dict(self) -> dict:
        def build(i):
            if self.left[i] < 0:
                k = self.leaf[i]
                return {
                    "times": self.leaf_times[k].tolist(),
                    "chf": self.leaf_chf[k].tolist(),
                    "mortality": float(self.leaf_mortality[k]),
                }
            return {
                "feature": int(self.feature[i]),
                "threshold": float(self.threshold[i]),
                "left": build(self.left[i]),
                "right": build(self.right[i]),
            }

        return build(0)

    @classmethod
    def from_dict(cls, d: dict) -> "SurvivalTree":
        feature, threshold, left, right, leaf = [], [], [], [], []
        times, chf, mort = [], [], []

        def add(node):
            i = len(feature)
            feature.append(0)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            leaf.append(-1)
            if "feature" in node:
                feature[i] = node["feature"]
                threshold[i] = node["threshold"]
                left[i] = add(node["left"])
                right[i] = add(node["right"])
            else:
                leaf[i] = len(times)
                times.append(np.asarray(node["times"], dtype=float))
                chf.append(np.asarray(node["chf"], dtype=float))
                mort.append(node["mortality"])
            return i

        add(d)
        return cls(
            np.asarray(feature, np.int64), np.asarray(threshold, float), np.asarray(left, np.int64),
            np.asarray(right, np.int64), np.asarray(leaf, np.int64), times, chf, np.asarray(mort, float),
        )


def _grow_tree(X, time, event, grid, config: RSFConfig, tree_index: int) -> SurvivalTree:
    n, p = X.shape
    rng = np.random.default_rng([config.seed, tree_index])
    boot = rng.integers(0, n, size=n)
    mtry = config.resolved_mtry(p)
    feature, threshold, left, right, leaf = [], [], [], [], []
    leaf_times, leaf_chf, leaf_mort = [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        leaf.append(-1)
        return len(feature) - 1

    def make_leaf(node, rows):
        t, h = nelson_aalen(time[rows], event[rows])
        leaf[node] = len(leaf_chf)
        leaf_times.append(t)
        leaf_chf.append(h)
        leaf_mort.append(float(_step_on_grid(t, h, grid).sum()))

    # depth-first, left child first, so RNG draws happen in a fixed order
    stack = [(new_node(), boot, 1)]
    while stack:
        node, rows, depth = stack.pop()
        if (
            (config.max_depth is not None and depth >= config.max_depth)
            or len(rows) < config.min_samples_split
            or not event[rows].any()
        ):
            make_leaf(node, rows)
            continue
        feats = np.sort(rng.choice(p, size=mtry, replace=False))
        c, thr, stat = _kernels.best_logrank_split(
            X[np.ix_(rows, feats)], time[rows], event[rows], config.min_samples_leaf
        )
        if c < 0 or not stat > 0:
            make_leaf(node, rows)
            continue
        f = int(feats[c])
        goes_left = X[rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        l_node, r_node = new_node(), new_node()
        left[node], right[node] = l_node, r_node
        stack.append((r_node, rows[~goes_left], depth + 1))
        stack.append((l_node, rows[goes_left], depth + 1))
    return SurvivalTree(
        np.asarray(feature, np.int64), np.asarray(threshold, float), np.asarray(left, np.int64),
        np.asarray(right, np.int64), np.asarray(leaf, np.int64), leaf_times, leaf_chf,
        np.asarray(leaf_mort, float),
    )


@dataclass
class RSFModel:
    trees: list[SurvivalTree]
    grid: np.ndarray
    config: RSFConfig
    feature_names: tuple[str, ...] = FEATURES

    def risk(self, Z) -> np.ndarray:
        """Ensemble mortality for each row of z-scored covariates."""
        Z = np.asarray(Z, dtype=float)
        total = np.zeros(Z.shape[0])
        for tree in self.trees:
            total += tree.leaf_mortality[tree.apply(Z)]
        return total / len(self.trees)

    def cumulative_hazard(self, Z) -> np.ndarray:
        """Ensemble CHF on ``grid`` for each row, shape (n, len(grid))."""
        Z = np.asarray(Z, dtype=float)
        out = np.zeros((Z.shape[0], len(self.grid)))
        for tree in self.trees:
            leaves = tree.apply(Z)
            for k in np.unique(leaves):
                out[leaves == k] += _step_on_grid(tree.leaf_times[k], tree.leaf_chf[k], self.grid)
        return out / len(self.trees)

    def to_dict(self) -> dict:
        c = self.config
        return {
            "format_version": FORMAT_VERSION,
            "model_type": "rsf",
            "feature_names": list(self.feature_names),
            "grid": self.grid.tolist(),
            "config": {
                "n_estimators": c.n_estimators,
                "min_samples_split": c.min_samples_split,
                "max_depth": c.max_depth,
                "mtry": c.mtry,
                "min_samples_leaf": c.min_samples_leaf,
                "seed": c.seed,
            },
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "RSFModel":
        if d.get("model_type") != "rsf":
            raise DataError(f"not a random survival forest file (model_type={d.get('model_type')!r})")
        if d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported forest format_version {d.get('format_version')!r}")
        return cls(
            trees=[SurvivalTree.from_dict(t) for t in d["trees"]],
            grid=np.asarray(d["grid"], dtype=float),
            config=RSFConfig(**d["config"]),
            feature_names=tuple(d["feature_names"]),
        )

    @classmethod
    def from_json(cls, text: str) -> "RSFModel":
        return cls.from_dict(json.loads(text))


def fit_rsf_arrays(X, time, event, config: RSFConfig = RSFConfig(), feature_names=None, n_jobs: int = 1) -> RSFModel:
    X = np.ascontiguousarray(X, dtype=float)
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=bool)
    if not event.any():
        raise DataError("cannot grow a survival forest without events")
    grid = np.unique(time[event])
    config.resolved_mtry(X.shape[1])

    def grow(i):
        return _grow_tree(X, time, event, grid, config, i)

    if n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            trees = list(pool.map(grow, range(config.n_estimators)))
    else:
        trees = [grow(i) for i in range(config.n_estimators)]
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(X.shape[1]))
    return RSFModel(trees, grid, config, names)


def fit_rsf(rows: Sequence[AugmentedRow], config: RSFConfig = RSFConfig(), feature_names=FEATURES, n_jobs: int = 1) -> RSFModel:
    """Grow a forest on augmented rows; competing deaths count as censored."""
    X = np.array([r.covariates for r in rows], dtype=float).reshape(len(rows), len(feature_names))
    time = np.array([r.time_to_event for r in rows], dtype=float)
    event = np.array([r.event == EventType.GRAFT_FAILURE for r in rows])
    return fit_rsf_arrays(X, time, event, config, feature_names, n_jobs)


def rsf_risk(model: RSFModel, covariates) -> float:
    z = np.asarray(covariates, dtype=float).reshape(1, -1)
    return float(model.risk(z)[0])
