"""Random survival forest with log-rank splitting and Nelson-Aalen leaves."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from functools import cached_property

import numba
import numpy as np

from .core import (
    Dataset,
    DegenerateDatasetError,
    Kind,
    StepFunction,
    TimeGrid,
    _nelson_aalen_values,
    build_time_grid,
)

EPSILON = 1e-8


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 250
    mtry: int | None = None  # None means ceil(sqrt(d))
    min_leaf_events: int = 3
    max_depth: int | None = None
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf_events < 1:
            raise ValueError("min_leaf_events must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be >= 1")

    def resolve_mtry(self, d: int) -> int:
        m = self.mtry if self.mtry is not None else math.ceil(math.sqrt(d))
        if not 1 <= m <= d:
            raise ValueError(f"mtry must lie in [1, {d}], got {m}")
        return m


def _logrank_table(time, event, left_mask):
    u = np.unique(time[event == 1])
    at_risk = time[:, None] >= u[None, :]
    dies = (time[:, None] == u[None, :]) & (event[:, None] == 1)
    Y = at_risk.sum(axis=0)
    D = dies.sum(axis=0)
    YL = at_risk[left_mask].sum(axis=0)
    DL = dies[left_mask].sum(axis=0)
    return Y, D, YL, DL


def _logrank_from_counts(Y, D, YL, DL):
    """Standardized log-rank statistic from per-time counts (last axis = time)."""
    Y = Y.astype(float)
    frac = np.divide(YL, Y, out=np.zeros(np.broadcast(YL, Y).shape), where=Y > 0)
    expected = D * frac
    var_terms = np.divide(D * frac * (1 - frac) * (Y - D), Y - 1,
                          out=np.zeros(np.broadcast(YL, Y).shape), where=Y > 1)
    num = (DL - expected).sum(axis=-1)
    var = var_terms.sum(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        stat = np.where(var > 0, num / np.sqrt(np.where(var > 0, var, 1.0)), 0.0)
    return stat


def log_rank_statistic(left: Dataset, right: Dataset) -> float:
    """Two-sample log-rank statistic ``(O - E) / sqrt(V)`` for the left group.

    Returns 0 when the variance vanishes.
    """
    if left.n == 0 or right.n == 0:
        raise ValueError("both groups must be non-empty")
    time = np.concatenate([left.time, right.time])
    event = np.concatenate([left.event, right.event])
    mask = np.zeros(time.shape[0], dtype=bool)
    mask[: left.n] = True
    if not event.any():
        return 0.0
    return float(_logrank_from_counts(*_logrank_table(time, event, mask)))


@numba.njit(cache=True, nogil=True)
def _scan_cuts(xs, tidx, es, Y, D, min_leaf_events):
    """Scan every cut of feature-sorted samples; best |log-rank| and cut position."""
    n = xs.shape[0]
    k = Y.shape[0]
    YL = np.zeros(k)
    DL = np.zeros(k)
    n_ev = 0
    for i in range(n):
        n_ev += es[i]
    left_ev = 0
    best_stat = 0.0
    best_cut = -1
    for i in range(n - 1):
        for j in range(tidx[i] + 1):
            YL[j] += 1.0
        if es[i] == 1:
            DL[tidx[i]] += 1.0
            left_ev += 1
        if xs[i + 1] <= xs[i]:
            continue
        if left_ev < min_leaf_events or n_ev - left_ev < min_leaf_events:
            continue
        num = 0.0
        var = 0.0
        for j in range(k):
            if Y[j] <= 0.0:
                continue
            frac = YL[j] / Y[j]
            num += DL[j] - D[j] * frac
            if Y[j] > 1.0:
                var += D[j] * frac * (1.0 - frac) * (Y[j] - D[j]) / (Y[j] - 1.0)
        if var > 0.0:
            stat = abs(num) / np.sqrt(var)
            if stat > best_stat:
                best_stat = stat
                best_cut = i + 1
    return best_stat, best_cut


def _best_split(x, time, event, min_leaf_events):
    """Best threshold on one feature; returns (|stat|, threshold) or None."""
    order = np.argsort(x, kind="stable")
    xs, ts, es = x[order], time[order], event[order]
    u = np.unique(ts[es == 1])
    if u.size == 0:
        return None
    # samples are at risk at u_j for every j <= tidx
    tidx = np.searchsorted(u, ts, side="right") - 1
    Y = (np.bincount(tidx[tidx >= 0], minlength=u.size)[::-1].cumsum()[::-1]).astype(float)
    D = np.bincount(tidx[es == 1], minlength=u.size).astype(float)
    stat, i = _scan_cuts(xs, tidx.astype(np.int64), es.astype(np.int64), Y, D,
                         min_leaf_events)
    if i < 0:
        return None
    return float(stat), 0.5 * (xs[i - 1] + xs[i])


@numba.njit(cache=True, nogil=True)
def _apply_packed(X, feature, threshold, left, right, roots, leaf_offset):
    n, n_trees = X.shape[0], roots.shape[0]
    out = np.empty((n, n_trees), dtype=np.int64)
    for i in range(n):
        for t in range(n_trees):
            node = roots[t]
            while feature[node] >= 0:
                if X[i, feature[node]] <= threshold[node]:
                    node = left[node]
                else:
                    node = right[node]
            out[i, t] = left[node] + leaf_offset[t]
    return out


@dataclass(frozen=True, eq=False)
class SurvivalTree:
    """Array-encoded binary tree; ``feature[i] == -1`` marks a leaf.

    For leaves ``left[i]`` holds the row of ``leaf_values``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    leaf_values: np.ndarray

    def apply(self, X) -> np.ndarray:
        """Leaf row reached by each row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            nd = node[active]
            f = self.feature[nd]
            go_left = X[np.flatnonzero(active), f] <= self.threshold[nd]
            node[active] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return self.left[node]

    def predict_values(self, X) -> np.ndarray:
        return self.leaf_values[self.apply(X)]

    @property
    def depth(self) -> int:
        def rec(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(rec(self.left[i]), rec(self.right[i]))
        return rec(0)

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "n_samples": self.n_samples.tolist(),
            "leaf_values": self.leaf_values.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SurvivalTree":
        return cls(
            np.array(data["feature"], dtype=np.int64),
            np.array(data["threshold"], dtype=float),
            np.array(data["left"], dtype=np.int64),
            np.array(data["right"], dtype=np.int64),
            np.array(data["n_samples"], dtype=np.int64),
            np.array(data["leaf_values"], dtype=float).reshape(
                len(data["leaf_values"]), -1),
        )


def _grow_tree(X, time, event, grid, mtry, min_leaf_events, max_depth, rng):
    feature, threshold, left, right, n_samples, leaves = [], [], [], [], [], []

    def new_node():
        for lst in (feature, threshold, left, right, n_samples):
            lst.append(0)
        return len(feature) - 1

    def make_leaf(node, idx):
        feature[node] = -1
        threshold[node] = 0.0
        left[node] = len(leaves)
        right[node] = -1
        leaves.append(_nelson_aalen_values(time[idx], event[idx], grid).values)

    root = new_node()
    stack = [(root, np.arange(X.shape[0]), 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        n_samples[node] = idx.shape[0]
        ev = event[idx]
        split = None
        if (max_depth is None or depth < max_depth) and ev.sum() >= 2 * min_leaf_events:
            best = None
            for f in rng.choice(d, size=mtry, replace=False):
                cand = _best_split(X[idx, f], time[idx], ev, min_leaf_events)
                if cand is not None and (best is None or cand[0] > best[0]):
                    best = (cand[0], int(f), cand[1])
            split = best
        if split is None:
            make_leaf(node, idx)
            continue
        _, f, thr = split
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[~mask], depth + 1))
        stack.append((lnode, idx[mask], depth + 1))

    return SurvivalTree(
        np.array(feature, dtype=np.int64), np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64), np.array(right, dtype=np.int64),
        np.array(n_samples, dtype=np.int64), np.vstack(leaves))


@dataclass(frozen=True, eq=False)
class SurvivalForest:
    trees: tuple
    grid: TimeGrid
    config: ForestConfig
    n_features: int
    epsilon: float = EPSILON

    @cached_property
    def _packed(self):
        node_off = np.cumsum([0] + [t.feature.shape[0] for t in self.trees])
        leaf_off = np.cumsum([0] + [t.leaf_values.shape[0] for t in self.trees])
        # child pointers are shifted to global node ids; leaf rows stay tree-local
        left, right = [], []
        for t, off in zip(self.trees, node_off):
            internal = t.feature >= 0
            left.append(np.where(internal, t.left + off, t.left))
            right.append(np.where(internal, t.right + off, t.right))
        return (
            np.concatenate([t.feature for t in self.trees]),
            np.concatenate([t.threshold for t in self.trees]),
            np.concatenate(left), np.concatenate(right),
            node_off[:-1].astype(np.int64), leaf_off[:-1].astype(np.int64),
            np.vstack([t.leaf_values for t in self.trees]),
        )

    def apply(self, X) -> np.ndarray:
        """Global leaf row per (point, tree), shape ``(n, n_trees)``."""
        feature, threshold, left, right, roots, leaf_off, _ = self._packed
        X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
        if X.shape[1] != self.n_features:
            raise ValueError(
                f"expected covariate dimension {self.n_features}, got {X.shape[1]}")
        return _apply_packed(X, feature, threshold, left, right, roots, leaf_off)

    def predict_chf_matrix(self, X) -> np.ndarray:
        leaves = self.apply(X)
        n, n_trees = leaves.shape
        # nearby points touch few leaves: mean = (point x leaf hit counts) @ leaf values
        used, col = np.unique(leaves, return_inverse=True)
        counts = np.bincount(
            (np.repeat(np.arange(n), n_trees) * used.size + col.ravel()),
            minlength=n * used.size).reshape(n, used.size)
        mean = (counts @ self._packed[-1][used]) / n_trees
        # blocked BLAS sums may round equal neighbours apart by an ulp
        return np.maximum(np.maximum.accumulate(mean, axis=1), self.epsilon)

    def predict_chf(self, x) -> StepFunction:
        return forest_predict_chf(self, x)

    def predict_risk(self, X) -> np.ndarray:
        """Ensemble mortality: summed CHF over the grid, larger = riskier."""
        return self.predict_chf_matrix(X).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "kind": "rsf",
            "config": {k: v for k, v in asdict(self.config).items() if k != "n_jobs"},
            "n_features": self.n_features,
            "epsilon": self.epsilon,
            "grid": {"event_times": self.grid.event_times.tolist(),
                     "gamma": self.grid.gamma},
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SurvivalForest":
        grid = TimeGrid(np.array(data["grid"]["event_times"], dtype=float),
                        float(data["grid"]["gamma"]))
        return cls(tuple(SurvivalTree.from_dict(t) for t in data["trees"]), grid,
                   ForestConfig(**data["config"]), int(data["n_features"]),
                   float(data.get("epsilon", EPSILON)))


def fit_forest(dataset: Dataset, config: ForestConfig | None = None,
               grid: TimeGrid | None = None) -> SurvivalForest:
    """Grow ``config.n_trees`` log-rank trees on bootstrap resamples.

    Tree ``i`` draws from its own RNG stream spawned from ``config.seed``, so
    the result does not depend on ``config.n_jobs``.
    """
    config = config or ForestConfig()
    if dataset.n_events < config.min_leaf_events:
        raise DegenerateDatasetError(
            f"degenerate dataset: {dataset.n_events} events, "
            f"need at least {config.min_leaf_events}")
    grid = grid if grid is not None else build_time_grid(dataset)
    mtry = config.resolve_mtry(dataset.d)
    streams = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    X, time, event = dataset.X, dataset.time, dataset.event

    def grow(ss):
        rng = np.random.default_rng(ss)
        boot = rng.integers(0, dataset.n, size=dataset.n)
        return _grow_tree(X[boot], time[boot], event[boot], grid, mtry,
                          config.min_leaf_events, config.max_depth, rng)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            trees = tuple(pool.map(grow, streams))
    else:
        trees = tuple(grow(ss) for ss in streams)
    return SurvivalForest(trees, grid, config, dataset.d)


def forest_predict_chf(forest: SurvivalForest, x) -> StepFunction:
    values = forest.predict_chf_matrix(np.asarray(x, dtype=float).ravel()[None, :])[0]
    return StepFunction(forest.grid, values, Kind.CHF)
