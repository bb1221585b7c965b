"""Cox proportional hazards model: Breslow partial likelihood, Newton fit, prediction."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset,
    DegenerateDatasetError,
    Kind,
    StepFunction,
    TimeGrid,
    build_time_grid,
)

EPSILON = 1e-8
_STEP_TOL = 1e-6
_INFO_FLOOR = 1e-10


class CoxFitError(RuntimeError):
    pass


class ConvergenceError(CoxFitError):
    """Newton iteration did not reach the gradient tolerance."""

    def __init__(self, message, coefficients):
        super().__init__(message)
        self.coefficients = coefficients


class SeparationError(CoxFitError):
    """The partial likelihood has no finite maximizer on this data."""

    def __init__(self, message, coefficients):
        super().__init__(message)
        self.coefficients = coefficients


def _risk_index(time):
    """Sort order of ``time`` and, per sample, the first sorted position still at risk."""
    order = np.argsort(time, kind="stable")
    sorted_t = time[order]
    first = np.searchsorted(sorted_t, time, side="left")
    return order, first


def _derivatives(b, X, time, event, order=2):
    """Log partial likelihood and (optionally) gradient and Hessian, Breslow ties."""
    sort_idx, first = _risk_index(time)
    eta = X @ b
    shift = eta.max() if eta.size else 0.0
    w = np.exp(eta - shift)
    Xs = X[sort_idx]
    ws = w[sort_idx]
    # reverse cumulative sums give risk-set totals for every start position
    S0 = np.cumsum(ws[::-1])[::-1]
    ev = event == 1
    s0 = S0[first[ev]]
    loglik = float(np.sum(eta[ev]) - np.sum(np.log(s0) + shift))
    if order == 0:
        return loglik
    S1 = np.cumsum((ws[:, None] * Xs)[::-1], axis=0)[::-1]
    s1 = S1[first[ev]]
    mean = s1 / s0[:, None]
    grad = X[ev].sum(axis=0) - mean.sum(axis=0)
    if order == 1:
        return loglik, grad
    outer = ws[:, None, None] * Xs[:, :, None] * Xs[:, None, :]
    S2 = np.cumsum(outer[::-1], axis=0)[::-1]
    s2 = S2[first[ev]]
    hess = -(s2 / s0[:, None, None] - mean[:, :, None] * mean[:, None, :]).sum(axis=0)
    return loglik, grad, hess


def partial_log_likelihood(b, dataset: Dataset) -> float:
    """Log of the Cox partial likelihood with Breslow handling of ties."""
    b = np.asarray(b, dtype=float)
    if b.shape != (dataset.d,):
        raise ValueError(f"expected {dataset.d} coefficients, got shape {b.shape}")
    return _derivatives(b, dataset.X, dataset.time, dataset.event, order=0)


def partial_log_likelihood_gradient(b, dataset: Dataset) -> np.ndarray:
    return _derivatives(np.asarray(b, float), dataset.X, dataset.time, dataset.event, 1)[1]


def partial_log_likelihood_hessian(b, dataset: Dataset) -> np.ndarray:
    return _derivatives(np.asarray(b, float), dataset.X, dataset.time, dataset.event, 2)[2]


def breslow_baseline(b, dataset: Dataset, grid: TimeGrid, epsilon=EPSILON) -> StepFunction:
    """Breslow estimate of ``H_0`` on ``grid``, clamped below at ``epsilon``.

    With ``b = 0`` this is the Nelson-Aalen estimator.
    """
    time, event = dataset.time, dataset.event
    eta = dataset.X @ np.asarray(b, dtype=float)
    w = np.exp(eta - eta.max())
    scale = np.exp(eta.max())
    own = np.unique(time[event == 1])
    order = np.argsort(time, kind="stable")
    S0 = np.cumsum(w[order][::-1])[::-1]
    first = np.searchsorted(time[order], own, side="left")
    ev_sorted = np.sort(time[event == 1])
    deaths = (np.searchsorted(ev_sorted, own, side="right")
              - np.searchsorted(ev_sorted, own, side="left"))
    cum = np.cumsum(deaths / (S0[first] * scale))
    idx = np.searchsorted(own, grid.event_times, side="right") - 1
    values = np.where(idx >= 0, cum[np.clip(idx, 0, None)], 0.0)
    return StepFunction(grid, np.maximum(values, epsilon), Kind.CHF)


@dataclass(frozen=True, eq=False)
class CoxModel:
    """Fitted Cox model ``H(t|x) = H_0(t) exp(b'x)``."""

    coefficients: np.ndarray
    baseline_chf: StepFunction
    epsilon: float = EPSILON

    def __post_init__(self):
        b = np.array(self.coefficients, dtype=float).ravel()
        if not np.all(np.isfinite(b)):
            raise ValueError("coefficients must be finite")
        b.setflags(write=False)
        object.__setattr__(self, "coefficients", b)

    @property
    def grid(self) -> TimeGrid:
        return self.baseline_chf.grid

    @property
    def d(self) -> int:
        return self.coefficients.shape[0]

    def predict_risk(self, x):
        return predict_risk(self, x)

    def predict_chf(self, x) -> StepFunction:
        return predict_chf(self, x)

    def predict_chf_matrix(self, X) -> np.ndarray:
        """CHF values for each row of ``X``, shape ``(n, m+1)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self._check_dim(X.shape[1])
        H = np.exp(X @ self.coefficients)[:, None] * self.baseline_chf.values[None, :]
        return np.maximum(H, self.epsilon)

    def _check_dim(self, d):
        if d != self.d:
            raise ValueError(f"expected covariate dimension {self.d}, got {d}")

    def to_dict(self) -> dict:
        return {
            "kind": "cox",
            "coefficients": self.coefficients.tolist(),
            "grid": {"event_times": self.grid.event_times.tolist(),
                     "gamma": self.grid.gamma},
            "baseline_values": self.baseline_chf.values.tolist(),
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CoxModel":
        grid = TimeGrid(np.array(data["grid"]["event_times"], dtype=float),
                        float(data["grid"]["gamma"]))
        baseline = StepFunction(grid, np.array(data["baseline_values"], dtype=float))
        return cls(np.array(data["coefficients"], dtype=float), baseline,
                   float(data.get("epsilon", EPSILON)))


def predict_risk(model: CoxModel, x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    model._check_dim(x.shape[0])
    return float(x @ model.coefficients)


def predict_chf(model: CoxModel, x) -> StepFunction:
    return StepFunction(model.grid, model.predict_chf_matrix(x)[0], Kind.CHF)


def fit_cox(
    dataset: Dataset,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_halvings: int = 20,
    standardize: bool = False,
    grid: TimeGrid | None = None,
    epsilon: float = EPSILON,
    max_linear_predictor: float = 300.0,
) -> CoxModel:
    """Maximize the partial likelihood by Newton steps with step halving.

    Parameters
    ----------
    tol : float
        Stop once the gradient norm (on the fitting scale) is at most ``tol``.
    standardize : bool
        Fit on z-scored covariates; coefficients are returned on the original scale.
    grid : TimeGrid, optional
        Grid for the baseline CHF; defaults to the event-time grid of ``dataset``.
    max_linear_predictor : float
        Declare separation once ``max |b'x_i|`` exceeds this bound.

    Raises
    ------
    ConvergenceError, SeparationError
    """
    n_events = dataset.n_events
    if n_events == 0:
        raise DegenerateDatasetError("degenerate dataset: no uncensored samples")
    if dataset.d >= n_events:
        raise CoxFitError(
            f"need more events ({n_events}) than covariates ({dataset.d})")
    X = dataset.X
    if standardize:
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        sd[sd == 0] = 1.0
        X = (X - mu) / sd
    time, event = dataset.time, dataset.event

    b = np.zeros(dataset.d)
    loglik, grad, hess = _derivatives(b, X, time, event)
    # directions with no information at the start (e.g. full one-hot blocks) are
    # unidentified rather than divergent; the separation check skips them
    eig0, vec0 = np.linalg.eigh(-hess)
    identified = vec0[:, eig0 > _INFO_FLOOR * max(eig0.max(), 0.0)]
    converged = False
    for it in range(max_iter + 1):
        step = _newton_step(hess, grad, identified)
        # a vanishing gradient alone is not enough: under separation it decays
        # while the Newton step stays large
        if np.linalg.norm(grad) <= tol and np.linalg.norm(step) <= _STEP_TOL * (1 + np.linalg.norm(b)):
            converged = True
            break
        if it == max_iter:
            break
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = b + scale * step
            new_loglik = _derivatives(cand, X, time, event, order=0)
            if np.isfinite(new_loglik) and new_loglik >= loglik - 1e-12 * abs(loglik):
                break
            scale *= 0.5
        b = cand
        if np.max(np.abs(X @ b)) > max_linear_predictor:
            raise SeparationError(
                "coefficient norm diverges; partial likelihood appears unbounded",
                _to_original(b, standardize, dataset))
        loglik, grad, hess = _derivatives(b, X, time, event)
    if not converged:
        raise ConvergenceError(
            f"no convergence after {max_iter} iterations "
            f"(gradient norm {np.linalg.norm(grad):.3g})",
            _to_original(b, standardize, dataset))

    if identified.shape[1] and np.linalg.eigvalsh(
            identified.T @ -hess @ identified).min() <= _INFO_FLOOR * eig0.max():
        raise SeparationError(
            "information matrix vanished at the optimum; partial likelihood appears unbounded",
            _to_original(b, standardize, dataset))

    coef = _to_original(b, standardize, dataset)
    grid = grid if grid is not None else build_time_grid(dataset)
    return CoxModel(coef, breslow_baseline(coef, dataset, grid, epsilon), epsilon)


def _newton_step(hess, grad, basis):
    if basis.shape[1] == 0:
        return np.zeros_like(grad)
    info = basis.T @ -hess @ basis
    g = basis.T @ grad
    try:
        return basis @ np.linalg.solve(info, g)
    except np.linalg.LinAlgError:
        return basis @ np.linalg.lstsq(info, g, rcond=None)[0]


def _to_original(b, standardize, dataset):
    if not standardize:
        return b.copy()
    sd = dataset.X.std(axis=0)
    sd[sd == 0] = 1.0
    return b / sd
