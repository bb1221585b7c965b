"""Clustered covariates with Cox-consistent Weibull survival times."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import Dataset
from .explainer import sample_ball


@dataclass(frozen=True)
class ClusterSpec:
    center: tuple
    radius: float
    count: int
    lam: float
    shape: float
    b_true: tuple
    event_prob: float = 0.9
    clip_time: float = 2000.0

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "b_true", tuple(float(c) for c in self.b_true))
        if len(self.center) != len(self.b_true):
            raise ValueError("center and b_true must have the same length")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if not self.shape > 0:
            raise ValueError("shape must be positive")
        if not 0 <= self.event_prob <= 1:
            raise ValueError("event_prob must lie in [0, 1]")
        if self.count < 0:
            raise ValueError("count must be nonnegative")

    @property
    def d(self) -> int:
        return len(self.center)


def intersect_radius(p0, p1) -> float:
    """Cluster radius giving overlapping balls: ``ceil(||p0 - p1|| / 2) + 2``."""
    dist = float(np.linalg.norm(np.asarray(p0, float) - np.asarray(p1, float)))
    return float(math.ceil(dist / 2) + 2)


def weibull_time(x, b, lam, shape, u, clip_time=math.inf):
    """Inverse-transform Weibull time ``(-ln u / (lam exp(b'x)))**(1/shape)``.

    Vectorized over rows of ``x`` and ``u``; clipped at ``clip_time``.
    """
    risk = np.asarray(x, float) @ np.asarray(b, float)
    t = (-np.log(u) / (lam * np.exp(risk))) ** (1.0 / shape)
    t = np.minimum(t, clip_time)
    return float(t) if np.ndim(t) == 0 else t


CENTER_0 = (0.0, 0.0, 0.0, 0.0, 0.0)
CENTER_1 = (4.0, -8.0, 2.0, 4.0, 2.0)
B_TRUE_0 = (1e-6, 0.1, -0.15, 1e-6, 1e-6)
B_TRUE_1 = (1e-6, -0.15, 1e-6, 1e-6, -0.1)


def default_specs(count: int = 1000) -> list[ClusterSpec]:
    """The two overlapping 5-d clusters used throughout the experiments."""
    radius = intersect_radius(CENTER_0, CENTER_1)
    return [
        ClusterSpec(CENTER_0, radius, count, 1e-5, 2.0, B_TRUE_0),
        ClusterSpec(CENTER_1, radius, count, 1e-5, 2.0, B_TRUE_1),
    ]


@dataclass(frozen=True, eq=False)
class SyntheticData:
    dataset: Dataset
    cluster: np.ndarray
    specs: tuple = field(default=())

    def b_true(self) -> np.ndarray:
        """Generating coefficients per sample, shape ``(n, d)``."""
        table = np.array([s.b_true for s in self.specs])
        return table[self.cluster]

    def sidecar(self) -> dict:
        return {
            "clusters": [
                {"index": i, "center": list(s.center), "radius": s.radius,
                 "count": s.count, "lambda": s.lam, "v": s.shape,
                 "b_true": list(s.b_true), "event_prob": s.event_prob,
                 "clip_time": s.clip_time}
                for i, s in enumerate(self.specs)
            ],
            "cluster_of_row": self.cluster.tolist(),
        }


def generate_dataset(specs, seed=0) -> SyntheticData:
    """Draw every cluster in order; each cluster gets its own spawned RNG stream."""
    specs = tuple(specs)
    if not specs:
        raise ValueError("at least one cluster spec is required")
    d = specs[0].d
    if any(s.d != d for s in specs):
        raise ValueError("all clusters must share the covariate dimension")
    streams = np.random.SeedSequence(seed).spawn(len(specs))
    X, T, E, C = [], [], [], []
    for c, (spec, ss) in enumerate(zip(specs, streams)):
        ball_ss, draw_ss = ss.spawn(2)
        x = sample_ball(spec.center, spec.radius, spec.count, ball_ss)
        rng = np.random.default_rng(draw_ss)
        # U in (0, 1]: 1 - uniform[0, 1) keeps log finite
        u = 1.0 - rng.uniform(size=spec.count)
        t = weibull_time(x, spec.b_true, spec.lam, spec.shape, u, spec.clip_time)
        e = (rng.uniform(size=spec.count) < spec.event_prob).astype(np.int64)
        X.append(x)
        T.append(np.atleast_1d(t))
        E.append(e)
        C.append(np.full(spec.count, c, dtype=np.int64))
    ds = Dataset(np.vstack(X).reshape(-1, d), np.concatenate(T), np.concatenate(E),
                 tuple(f"x{i + 1}" for i in range(d)))
    return SyntheticData(ds, np.concatenate(C), specs)
