"""Survival data containers, the event-time grid and nonparametric estimators."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np


class SurvivalDataError(ValueError):
    """Raised when a dataset violates the survival-data contract."""


class DegenerateDatasetError(SurvivalDataError):
    """Raised when an operation needs at least one observed event."""


@dataclass(frozen=True)
class Sample:
    covariates: np.ndarray
    time: float
    event: int

    def __post_init__(self):
        x = np.asarray(self.covariates, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise SurvivalDataError("covariates must be a finite 1-d vector")
        if not np.isfinite(self.time) or self.time < 0:
            raise SurvivalDataError(f"time must be finite and >= 0, got {self.time}")
        if self.event not in (0, 1):
            raise SurvivalDataError(f"event must be 0 or 1, got {self.event}")
        object.__setattr__(self, "covariates", x)


@dataclass(frozen=True)
class Dataset:
    """Right-censored survival data stored column-wise.

    Parameters
    ----------
    X : array of shape (n, d)
        Covariates.
    time : array of shape (n,)
        Observed times (event or censoring).
    event : array of shape (n,)
        1 if the event was observed, 0 if censored.
    feature_names : list of str, optional
        Defaults to ``x0 .. x{d-1}``.
    """

    X: np.ndarray
    time: np.ndarray
    event: np.ndarray
    feature_names: tuple = field(default=())

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        time = np.asarray(self.time, dtype=float).ravel()
        event = np.asarray(self.event).ravel()
        if X.shape[0] != time.shape[0] or event.shape[0] != time.shape[0]:
            raise SurvivalDataError("X, time and event must have the same length")
        if not np.all(np.isfinite(X)):
            raise SurvivalDataError("covariates contain non-finite values")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise SurvivalDataError("times must be finite and nonnegative")
        if not np.all(np.isin(event, (0, 1))):
            raise SurvivalDataError("event indicators must be 0 or 1")
        names = tuple(self.feature_names) or tuple(f"x{i}" for i in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise SurvivalDataError(
                f"{len(names)} feature names given for {X.shape[1]} features")
        for arr in (X, time):
            arr.setflags(write=False)
        event = event.astype(np.int64)
        event.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "time", time)
        object.__setattr__(self, "event", event)
        object.__setattr__(self, "feature_names", names)

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], feature_names=()) -> "Dataset":
        if not samples:
            raise SurvivalDataError("no samples")
        dims = {s.covariates.shape[0] for s in samples}
        if len(dims) != 1:
            raise SurvivalDataError(f"samples have mixed dimensionality {sorted(dims)}")
        return cls(
            np.stack([s.covariates for s in samples]),
            np.array([s.time for s in samples]),
            np.array([s.event for s in samples]),
            feature_names,
        )

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n_events(self) -> int:
        return int(self.event.sum())

    def samples(self) -> list[Sample]:
        return [Sample(self.X[i], float(self.time[i]), int(self.event[i]))
                for i in range(self.n)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.time[idx], self.event[idx], self.feature_names)


@dataclass(frozen=True)
class TimeGrid:
    """Distinct event times ``t_0 < ... < t_m`` closed by the horizon ``t_m + gamma``.

    Interval ``j`` is ``[t_j, t_{j+1})``; the last one is ``[t_m, t_m + gamma]``.
    """

    event_times: np.ndarray
    gamma: float

    def __post_init__(self):
        t = np.asarray(self.event_times, dtype=float).ravel()
        if t.size == 0:
            raise DegenerateDatasetError("degenerate dataset: empty time grid")
        if np.any(t < 0) or np.any(np.diff(t) <= 0):
            raise SurvivalDataError("event times must be nonnegative and strictly increasing")
        if not self.gamma > 0:
            raise SurvivalDataError("gamma must be positive")
        t.setflags(write=False)
        object.__setattr__(self, "event_times", t)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def size(self) -> int:
        return self.event_times.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.event_times[-1] + self.gamma)

    @property
    def widths(self) -> np.ndarray:
        return np.append(np.diff(self.event_times), self.gamma)

    def index(self, t) -> np.ndarray:
        """Interval index holding each ``t``; -1 before ``t_0``."""
        return np.searchsorted(self.event_times, t, side="right") - 1

    def __eq__(self, other):
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return (self.gamma == other.gamma
                and np.array_equal(self.event_times, other.event_times))

    def __hash__(self):
        return hash((self.event_times.tobytes(), self.gamma))


class Kind(str, Enum):
    CHF = "chf"
    SURVIVAL = "survival"


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function on a :class:`TimeGrid`."""

    grid: TimeGrid
    values: np.ndarray
    kind: Kind = Kind.CHF

    def __post_init__(self):
        v = np.array(self.values, dtype=float).ravel()
        if v.shape[0] != self.grid.size:
            raise SurvivalDataError(
                f"expected {self.grid.size} values, got {v.shape[0]}")
        kind = Kind(self.kind)
        # tolerate float round-off in monotonicity
        tol = 1e-12 * max(1.0, float(np.abs(v).max(initial=0.0)))
        if kind is Kind.CHF:
            if np.any(v < 0) or np.any(np.diff(v) < -tol):
                raise SurvivalDataError("CHF values must be nonnegative and non-decreasing")
        else:
            if np.any(v <= 0) or np.any(v > 1) or np.any(np.diff(v) > tol):
                raise SurvivalDataError("survival values must lie in (0, 1] and not increase")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "kind", kind)

    def __call__(self, t):
        """Evaluate at times ``t``; CHF is 0 and survival 1 before ``t_0``."""
        idx = self.grid.index(np.asarray(t, dtype=float))
        before = 0.0 if self.kind is Kind.CHF else 1.0
        out = np.where(idx >= 0, self.values[np.clip(idx, 0, None)], before)
        return out if out.ndim else float(out)


def build_time_grid(dataset: Dataset, gamma_rel: float = 1e-6) -> TimeGrid:
    """Grid of the distinct uncensored times of ``dataset``.

    The closing width is ``gamma_rel * t_m`` (or ``gamma_rel`` when ``t_m`` is 0).
    """
    if not gamma_rel > 0:
        raise ValueError("gamma_rel must be positive")
    times = np.unique(dataset.time[dataset.event == 1])
    if times.size == 0:
        raise DegenerateDatasetError("degenerate dataset: no uncensored samples")
    t_max = float(times[-1])
    gamma = gamma_rel * t_max if t_max > 0 else gamma_rel
    return TimeGrid(times, gamma)


def risk_table(time, event, grid_times):
    """Events ``d_j`` and at-risk counts ``n_j`` at each grid time."""
    time = np.asarray(time, dtype=float)
    event = np.asarray(event)
    order = np.sort(time)
    at_risk = time.shape[0] - np.searchsorted(order, grid_times, side="left")
    ev_times = np.sort(time[event == 1])
    deaths = (np.searchsorted(ev_times, grid_times, side="right")
              - np.searchsorted(ev_times, grid_times, side="left"))
    return deaths, at_risk


def nelson_aalen(dataset: Dataset, grid: TimeGrid) -> StepFunction:
    """Nelson-Aalen cumulative hazard evaluated on ``grid``.

    Event times of ``dataset`` absent from ``grid`` are accumulated into the
    interval that contains them.
    """
    return _nelson_aalen_values(dataset.time, dataset.event, grid)


def _nelson_aalen_values(time, event, grid: TimeGrid) -> StepFunction:
    own = np.unique(np.asarray(time)[np.asarray(event) == 1])
    deaths, at_risk = risk_table(time, event, own)
    increments = np.divide(deaths, at_risk, out=np.zeros(own.shape), where=at_risk > 0)
    cum = np.cumsum(increments)
    idx = np.searchsorted(own, grid.event_times, side="right") - 1
    values = np.where(idx >= 0, cum[np.clip(idx, 0, None)] if cum.size else 0.0, 0.0)
    return StepFunction(grid, values, Kind.CHF)


def chf_to_survival(chf: StepFunction) -> StepFunction:
    if chf.kind is not Kind.CHF:
        raise ValueError("expected a CHF step function")
    return StepFunction(chf.grid, np.exp(-chf.values), Kind.SURVIVAL)


def survival_to_chf(surv: StepFunction) -> StepFunction:
    if surv.kind is not Kind.SURVIVAL:
        raise ValueError("expected a survival step function")
    return StepFunction(surv.grid, -np.log(surv.values), Kind.CHF)


def integrate_step(f: StepFunction) -> float:
    """Integral of ``f`` over ``[t_0, horizon]``."""
    return float(np.dot(f.values, f.grid.widths))


def concordance_index(risk_scores, dataset: Dataset) -> float:
    """Harrell's C-index; higher risk should mean shorter survival.

    A pair is comparable when the shorter time is an observed event; equal
    risk scores count one half.
    """
    risk = np.asarray(risk_scores, dtype=float).ravel()
    if risk.shape[0] != dataset.n:
        raise ValueError(f"expected {dataset.n} risk scores, got {risk.shape[0]}")
    time, event = dataset.time, dataset.event
    concordant = 0.0
    comparable = 0
    for i in np.flatnonzero(event == 1):
        later = time > time[i]
        k = int(later.sum())
        if not k:
            continue
        comparable += k
        r = risk[later]
        concordant += np.sum(r < risk[i]) + 0.5 * np.sum(r == risk[i])
    if comparable == 0:
        raise SurvivalDataError("no comparable pairs")
    return float(concordant / comparable)
