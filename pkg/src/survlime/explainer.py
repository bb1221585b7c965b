"""Local Cox-surrogate explanations of survival black boxes.

A black box maps a covariate vector to a cumulative hazard on a fixed time
grid.  Around a query point we draw perturbations uniformly in a ball, weight
them by proximity, and find the Cox coefficients whose log-CHF best matches
the black box in a weighted L2 sense over the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .core import Kind, StepFunction, TimeGrid, chf_to_survival

logger = logging.getLogger(__name__)


class ExplanationError(RuntimeError):
    pass


class DegenerateProblemError(ExplanationError):
    pass


class SingularProblemError(ExplanationError):
    pass


class SurvivalBlackBox(Protocol):
    grid: TimeGrid

    def predict_chf(self, x) -> StepFunction: ...


@dataclass(frozen=True)
class ExplainConfig:
    n_points: int = 1000
    radius: float = 0.5
    epsilon: float = 1e-8
    ln_clamp: float = 1e-6
    ridge: float = 1e-9
    seed: int = 0

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2")
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.epsilon > 0 or not self.ln_clamp > 0:
            raise ValueError("epsilon and ln_clamp must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")


def sample_ball(center, radius: float, count: int, seed=None) -> np.ndarray:
    """``count`` points uniform in the closed ball of ``radius`` about ``center``.

    Gaussian directions are normalized and scaled by ``radius * U**(1/d)``.
    ``seed`` may be an int, a SeedSequence or a Generator.
    """
    center = np.asarray(center, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    d = center.shape[0]
    g = rng.standard_normal((count, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # a zero Gaussian draw has probability zero; keep the center in that case
    norms[norms == 0] = np.inf
    u = rng.uniform(size=(count, 1))
    return center + g / norms * (radius * u ** (1.0 / d))


def proximity_weight(x, x_k, r: float):
    """Kernel ``1 - sqrt(||x - x_k|| / r)``, floored at 0 outside the ball.

    ``x_k`` may be a single point or a stack of points.
    """
    dist = np.linalg.norm(np.asarray(x_k, float) - np.asarray(x, float), axis=-1)
    w = np.maximum(1.0 - np.sqrt(dist / r), 0.0)
    return w if np.ndim(w) else float(w)


def curvature_weights(chf, ln_clamp: float = 1e-6) -> np.ndarray:
    """``H / ln H`` with ``|ln H|`` floored at ``ln_clamp`` (sign kept).

    Accepts a :class:`StepFunction` or an array of CHF values of any shape.
    """
    H = chf.values if isinstance(chf, StepFunction) else np.asarray(chf, dtype=float)
    lnH = np.log(H)
    sign = np.where(lnH < 0, -1.0, 1.0)
    return H / (sign * np.maximum(np.abs(lnH), ln_clamp))


@dataclass(frozen=True)
class QuadraticProblem:
    """``f(b) = sum_k weights_k (targets_k - b'X_k)^2 + constant``."""

    X: np.ndarray
    weights: np.ndarray
    targets: np.ndarray
    constant: float = 0.0

    def objective(self, b) -> float:
        r = self.targets - self.X @ np.asarray(b, dtype=float)
        return float(np.dot(self.weights, r * r) + self.constant)

    def gradient(self, b) -> np.ndarray:
        r = self.targets - self.X @ np.asarray(b, dtype=float)
        return -2.0 * self.X.T @ (self.weights * r)


def assemble_problem(points, prox_weights, chf_matrix, baseline, grid: TimeGrid,
                     ln_clamp: float = 1e-6) -> QuadraticProblem:
    """Reduce the weighted log-CHF distance to one least-squares row per point.

    Parameters
    ----------
    points : (N, d) array
    prox_weights : (N,) array
        Proximity weights ``w_k``.
    chf_matrix : (N, m+1) array
        Black-box CHF values ``H_j(x_k)``, all positive.
    baseline : StepFunction or (m+1,) array
        Surrogate baseline CHF ``H_0j``, all positive.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    w = np.asarray(prox_weights, dtype=float).ravel()
    H = np.atleast_2d(np.asarray(chf_matrix, dtype=float))
    H0 = baseline.values if isinstance(baseline, StepFunction) else np.asarray(baseline, float)
    widths = grid.widths
    if H.shape != (X.shape[0], widths.shape[0]) or H0.shape != widths.shape:
        raise ValueError(
            f"shape mismatch: points {X.shape}, chf {H.shape}, baseline {H0.shape}, "
            f"grid {widths.shape}")
    if w.shape[0] != X.shape[0]:
        raise ValueError("one proximity weight per point required")
    if np.any(H <= 0) or np.any(H0 <= 0):
        raise ValueError("CHF values must be positive before taking logarithms")

    A = np.log(H) - np.log(H0)[None, :]
    v = curvature_weights(H, ln_clamp)
    c = v * v * widths[None, :]
    c_sum = c.sum(axis=1)
    W = w * c_sum
    if not np.any(W > 0):
        raise DegenerateProblemError("all aggregate point weights are zero")
    safe = np.where(c_sum > 0, c_sum, 1.0)
    y = (c * A).sum(axis=1) / safe
    constant = float(np.dot(w, (c * A * A).sum(axis=1)) - np.dot(W, y * y))
    return QuadraticProblem(X, W, y, constant)


def solve_wls(problem: QuadraticProblem, ridge: float = 1e-9) -> np.ndarray:
    """Minimize ``problem`` through the normal equations.

    The diagonal jitter is ``ridge * trace(X'WX) / d``.
    """
    X, W = problem.X, problem.weights
    gram = X.T @ (W[:, None] * X)
    rhs = X.T @ (W * problem.targets)
    d = gram.shape[0]
    jitter = ridge * np.trace(gram) / d if d else 0.0
    gram = gram + jitter * np.eye(d)
    if not np.all(np.isfinite(gram)) or np.linalg.cond(gram) > 1e14:
        raise SingularProblemError("normal equations are singular")
    try:
        return np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularProblemError("normal equations are singular") from exc


@dataclass(frozen=True, eq=False)
class Explanation:
    query_point: np.ndarray
    coefficients: np.ndarray
    surrogate_chf: StepFunction
    blackbox_chf: StepFunction
    objective_value: float
    points: np.ndarray
    weights: np.ndarray
    residuals: np.ndarray
    feature_names: tuple = field(default=())

    @property
    def per_point(self) -> list[dict]:
        return [{"x": p, "w": float(w), "residual": float(r)}
                for p, w, r in zip(self.points, self.weights, self.residuals)]

    def to_dict(self) -> dict:
        names = list(self.feature_names) or [f"x{i}" for i in range(len(self.coefficients))]
        grid = self.surrogate_chf.grid
        return {
            "query_point": self.query_point.tolist(),
            "coefficients": self.coefficients.tolist(),
            "feature_names": names,
            "objective_value": self.objective_value,
            "grid": {"event_times": grid.event_times.tolist(), "gamma": grid.gamma},
            "surrogate_chf": self.surrogate_chf.values.tolist(),
            "blackbox_chf": self.blackbox_chf.values.tolist(),
        }

    def curve_rows(self) -> list[tuple[float, float, float]]:
        """``(time, black-box survival, surrogate survival)`` per grid time."""
        s_bb = chf_to_survival(self.blackbox_chf).values
        s_sur = chf_to_survival(self.surrogate_chf).values
        t = self.surrogate_chf.grid.event_times
        return list(zip(t.tolist(), s_bb.tolist(), s_sur.tolist()))


def blackbox_chf_matrix(blackbox, X) -> np.ndarray:
    """Black-box CHF values for each row of ``X``; batched when supported."""
    batched = getattr(blackbox, "predict_chf_matrix", None)
    if batched is not None:
        return np.asarray(batched(X), dtype=float)
    return np.stack([blackbox.predict_chf(x).values for x in X])


def explain(blackbox: SurvivalBlackBox, x, baseline: StepFunction,
            grid: TimeGrid | None = None, config: ExplainConfig | None = None,
            feature_names: Sequence[str] = ()) -> Explanation:
    """Explain the black-box CHF at ``x`` with a local Cox surrogate.

    ``N - 1`` perturbations are drawn in the ball of ``config.radius`` around
    ``x`` and ``x`` itself is appended as the last point.  The surrogate shares
    ``baseline`` as its baseline CHF.
    """
    config = config or ExplainConfig()
    grid = grid if grid is not None else baseline.grid
    if baseline.grid != grid or getattr(blackbox, "grid", grid) != grid:
        raise ValueError("black box, baseline and explanation grids differ")
    x = np.asarray(x, dtype=float).ravel()
    d = x.shape[0]
    if config.n_points < d:
        logger.warning("%d points cannot determine %d coefficients; the design is "
                       "under-determined and only the ridge jitter regularizes it",
                       config.n_points, d)

    points = np.vstack([sample_ball(x, config.radius, config.n_points - 1, config.seed),
                        x[None, :]])
    H = np.maximum(blackbox_chf_matrix(blackbox, points), config.epsilon)
    H0 = np.maximum(baseline.values, config.epsilon)
    w = proximity_weight(x, points, config.radius)
    problem = assemble_problem(points, w, H, H0, grid, config.ln_clamp)
    b = solve_wls(problem, config.ridge)
    surrogate = np.maximum(H0 * np.exp(x @ b), config.epsilon)
    return Explanation(
        query_point=x,
        coefficients=b,
        surrogate_chf=StepFunction(grid, surrogate, Kind.CHF),
        blackbox_chf=StepFunction(grid, np.maximum.accumulate(H[-1]), Kind.CHF),
        objective_value=max(problem.objective(b), 0.0),
        points=points,
        weights=w,
        residuals=problem.targets - points @ b,
        feature_names=tuple(feature_names),
    )
