"""Approximation measures and the synthetic-data experiment harness."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import Dataset, build_time_grid, chf_to_survival, concordance_index, StepFunction
from .cox import CoxModel, breslow_baseline, fit_cox
from .explainer import ExplainConfig, Explanation, explain
from .forest import ForestConfig, SurvivalForest, fit_forest
from .synth import SyntheticData, default_specs, generate_dataset

logger = logging.getLogger(__name__)


def rmse_model(b_model_list, b_expl_list) -> float:
    """``sqrt(mean_i ||b_model_i - b_expl_i||_2)``; the norm is not squared."""
    a = np.atleast_2d(np.asarray(b_model_list, dtype=float))
    b = np.atleast_2d(np.asarray(b_expl_list, dtype=float))
    if a.shape != b.shape or a.shape[0] == 0:
        raise ValueError(f"mismatched coefficient lists {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean(np.linalg.norm(a - b, axis=1))))


def rmse_true(b_true, b_expl_list) -> float:
    """As :func:`rmse_model`; a single ``b_true`` vector is broadcast over points."""
    b = np.atleast_2d(np.asarray(b_expl_list, dtype=float))
    t = np.broadcast_to(np.asarray(b_true, dtype=float), b.shape)
    return rmse_model(t, b)


def rmse_approx(blackbox_chfs, surrogate_chfs, time_indices=None) -> float:
    """``sqrt(mean_i sum_{j in J} (H_ij - H^cox_ij)^2)``; ``J`` defaults to all indices."""
    H = np.atleast_2d(np.asarray(
        [f.values if isinstance(f, StepFunction) else f for f in blackbox_chfs], float))
    G = np.atleast_2d(np.asarray(
        [f.values if isinstance(f, StepFunction) else f for f in surrogate_chfs], float))
    if H.shape != G.shape or H.shape[0] == 0:
        raise ValueError(f"mismatched CHF lists {H.shape} vs {G.shape}")
    J = np.arange(H.shape[1]) if time_indices is None else np.asarray(time_indices)
    if J.size == 0:
        raise ValueError("time index set is empty")
    diff = H[:, J] - G[:, J]
    return float(np.sqrt(np.mean(np.sum(diff * diff, axis=1))))


def select_best_mean_worst(distances) -> tuple[int, int, int]:
    """Indices of the smallest, closest-to-average and largest distance.

    ``np.argmin``/``argmax`` return the first occurrence, so ties go to the lowest index.
    """
    d = np.asarray(distances, dtype=float).ravel()
    if d.size == 0:
        raise ValueError("no distances")
    return int(np.argmin(d)), int(np.argmin(np.abs(d - d.mean()))), int(np.argmax(d))


@dataclass(frozen=True)
class Scenario:
    model: str = "cox"
    train_clusters: tuple = (0,)
    test_cluster: int = 0
    train_size: int = 900
    test_size: int = 100
    n_points: int = 1000
    radius: float = 0.5
    n_trees: int = 250
    cluster_count: int = 1000
    # surrogate baseline for a Cox black box: its own Breslow baseline, or
    # Nelson-Aalen on the training data (always used for the forest)
    cox_baseline: str = "blackbox"

    def __post_init__(self):
        if self.model not in ("cox", "rsf"):
            raise ValueError(f"unknown black-box kind {self.model!r}")
        if self.cox_baseline not in ("blackbox", "nelson-aalen"):
            raise ValueError(f"unknown baseline {self.cox_baseline!r}")
        if self.train_size + self.test_size > self.cluster_count:
            raise ValueError("train_size + test_size exceeds the cluster size")
        object.__setattr__(self, "train_clusters", tuple(self.train_clusters))

    @property
    def label(self) -> str:
        train = "".join(str(c) for c in self.train_clusters)
        return f"{self.model}_train{train}_test{self.test_cluster}_n{self.train_size}"


@dataclass(eq=False)
class ExperimentReport:
    scenario: Scenario
    seed: int
    feature_names: tuple
    points: list = field(default_factory=list)
    explanations: list = field(default_factory=list)
    c_index: float = float("nan")
    rmse_model: float | None = None
    rmse_true: float | None = None
    rmse_approx: float = float("nan")
    best: int = 0
    mean: int = 0
    worst: int = 0
    b_model: list | None = None

    def summary(self) -> dict:
        return {
            "scenario": asdict(self.scenario),
            "seed": self.seed,
            "n_test": len(self.points),
            "c_index": self.c_index,
            "rmse_model": self.rmse_model,
            "rmse_true": self.rmse_true,
            "rmse_approx": self.rmse_approx,
            "best": self.best,
            "mean": self.mean,
            "worst": self.worst,
            "b_model": self.b_model,
            "feature_names": list(self.feature_names),
        }


@dataclass(frozen=True, eq=False)
class _Split:
    train: Dataset
    test: Dataset
    test_b_true: np.ndarray


def _split(data: SyntheticData, scenario: Scenario, seed: int) -> _Split:
    """Disjoint random train/test rows per cluster."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 17, scenario.train_size]))
    perms = {c: rng.permutation(np.flatnonzero(data.cluster == c))
             for c in range(len(data.specs))}
    train_idx = np.concatenate([perms[c][: scenario.train_size]
                                for c in scenario.train_clusters])
    test_idx = perms[scenario.test_cluster][
        scenario.train_size: scenario.train_size + scenario.test_size]
    return _Split(data.dataset.subset(train_idx), data.dataset.subset(test_idx),
                  data.b_true()[test_idx])


def _fit_blackbox(scenario: Scenario, train: Dataset, seed: int, n_jobs: int = 1):
    grid = build_time_grid(train)
    if scenario.model == "cox":
        return fit_cox(train, grid=grid)
    return fit_forest(train, ForestConfig(n_trees=scenario.n_trees, seed=seed, n_jobs=n_jobs),
                      grid)


def _surrogate_baseline(scenario: Scenario, blackbox, train: Dataset):
    if scenario.model == "cox" and scenario.cox_baseline == "blackbox":
        return blackbox.baseline_chf
    return breslow_baseline(np.zeros(train.d), train, blackbox.grid)


def _risk(blackbox, X):
    if isinstance(blackbox, CoxModel):
        return X @ blackbox.coefficients
    return blackbox.predict_risk(X)


def _explain_seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, 29, i]).generate_state(1)[0])


def evaluate(scenario: Scenario, blackbox, train: Dataset, test: Dataset,
             test_b_true, seed: int, n_jobs: int = 1) -> ExperimentReport:
    """Explain every test point of ``test`` and aggregate the measures.

    Points are explained on ``n_jobs`` threads; records keep test-index order.
    """
    baseline = _surrogate_baseline(scenario, blackbox, train)
    report = ExperimentReport(scenario, seed, train.feature_names)
    try:
        report.c_index = concordance_index(_risk(blackbox, test.X), test)
    except ValueError as exc:
        logger.warning("C-index undefined on this test set: %s", exc)
    is_cox = isinstance(blackbox, CoxModel)

    def one(i):
        x = test.X[i]
        cfg = ExplainConfig(n_points=scenario.n_points, radius=scenario.radius,
                            seed=_explain_seed(seed, i))
        e = explain(blackbox, x, baseline, blackbox.grid, cfg, train.feature_names)
        diff = e.blackbox_chf.values - e.surrogate_chf.values
        rec = {
            "index": i,
            "x": x.tolist(),
            "b_expl": e.coefficients.tolist(),
            "b_true": np.asarray(test_b_true[i]).tolist(),
            "chf_distance": float(np.linalg.norm(diff)),
            "true_distance": float(np.linalg.norm(e.coefficients - test_b_true[i])),
            "objective": e.objective_value,
        }
        if is_cox:
            rec["b_model"] = blackbox.coefficients.tolist()
            rec["model_distance"] = float(
                np.linalg.norm(e.coefficients - blackbox.coefficients))
        return rec, e

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as pool:
            results = list(pool.map(one, range(test.n)))
    else:
        results = [one(i) for i in range(test.n)]
    for rec, e in results:
        report.points.append(rec)
        report.explanations.append(e)

    b_expl = [p["b_expl"] for p in report.points]
    report.rmse_true = rmse_true([p["b_true"] for p in report.points], b_expl)
    report.rmse_approx = rmse_approx([e.blackbox_chf for e in report.explanations],
                                     [e.surrogate_chf for e in report.explanations])
    if is_cox:
        report.b_model = blackbox.coefficients.tolist()
        report.rmse_model = rmse_model([p["b_model"] for p in report.points], b_expl)
        key = "model_distance"
    else:
        key = "chf_distance"
    report.best, report.mean, report.worst = select_best_mean_worst(
        [p[key] for p in report.points])
    return report


def run_experiment(scenario: Scenario, seed: int = 0, n_jobs: int = 1) -> ExperimentReport:
    """Generate data, train the black box, explain every test point."""
    data = generate_dataset(default_specs(scenario.cluster_count), seed)
    split = _split(data, scenario, seed)
    blackbox = _fit_blackbox(scenario, split.train, seed, n_jobs)
    return evaluate(scenario, blackbox, split.train, split.test, split.test_b_true, seed,
                    n_jobs)


def _run_group(scenarios: Sequence[Scenario], seed: int,
               n_jobs: int = 1) -> list[ExperimentReport]:
    """Run scenarios sharing one generated dataset; black boxes are fitted once per training set."""
    data = generate_dataset(default_specs(scenarios[0].cluster_count), seed)
    fitted = {}
    reports = []
    for sc in scenarios:
        split = _split(data, sc, seed)
        key = (sc.model, sc.train_clusters, sc.train_size, sc.n_trees)
        if key not in fitted:
            fitted[key] = _fit_blackbox(sc, split.train, seed, n_jobs)
        logger.info("explaining %s", sc.label)
        reports.append(evaluate(sc, fitted[key], split.train, split.test,
                                split.test_b_true, seed, n_jobs))
    return reports


def experiment_scenarios(experiment: int, n_trees: int = 250,
                         n_points: int = 1000) -> list[Scenario]:
    kw = dict(n_trees=n_trees, n_points=n_points)
    if experiment == 1:
        cases = [((0,), 0), ((1,), 1), ((0, 1), 0), ((0, 1), 1)]
        return [Scenario(m, tr, te, 900, 100, **kw)
                for m in ("cox", "rsf") for tr, te in cases]
    if experiment == 2:
        return [Scenario("cox", (0,), 0, n, 100, **kw) for n in (100, 200, 300, 400, 500)]
    if experiment == 3:
        return [Scenario(m, (0,), 0, n, 10, **kw)
                for m in ("cox", "rsf") for n in (10, 20, 30, 40)]
    raise ValueError(f"unknown experiment {experiment}")


def run_bench(experiment: int, seed: int = 0, n_trees: int = 250,
              n_points: int = 1000, n_jobs: int = 1) -> list[ExperimentReport]:
    return _run_group(experiment_scenarios(experiment, n_trees, n_points), seed, n_jobs)


def table_rows(experiment: int, reports: Sequence[ExperimentReport],
               model: str = "cox") -> list[dict]:
    """Rows laid out like the published result tables, one table per black-box kind."""
    rows = []
    for r in reports:
        sc = r.scenario
        if sc.model != model:
            continue
        if experiment == 1:
            row = {"train_clusters": "{" + ",".join(map(str, sc.train_clusters)) + "}",
                   "test_cluster": sc.test_cluster}
            if model == "cox":
                row.update(rmse_model=r.rmse_model,
                           rmse_true_0=r.rmse_true if sc.test_cluster == 0 else None,
                           rmse_true_1=r.rmse_true if sc.test_cluster == 1 else None)
            else:
                row.update(rmse_approx=r.rmse_approx, c_index=r.c_index)
        else:
            row = {"train_size": sc.train_size, "c_index": r.c_index}
            if model == "cox":
                row.update(rmse_model=r.rmse_model, rmse_true=r.rmse_true)
            else:
                row.update(rmse_approx=r.rmse_approx)
        rows.append(row)
    return rows


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else "nan"
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_report(report: ExperimentReport, out_dir, prefix: str | None = None) -> list[Path]:
    """Summary JSON, per-point CSV, and best/mean/worst bar and curve CSVs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prefix = prefix or report.scenario.label
    written = []

    p = out / f"{prefix}_summary.json"
    p.write_text(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n")
    written.append(p)

    names = list(report.feature_names)
    header = (["index"] + [f"x_{n}" for n in names] + [f"b_expl_{n}" for n in names]
              + ["model_distance", "true_distance", "chf_distance", "objective"])
    rows = [[p_["index"], *p_["x"], *p_["b_expl"], p_.get("model_distance"),
             p_["true_distance"], p_["chf_distance"], p_["objective"]]
            for p_ in report.points]
    p = out / f"{prefix}_points.csv"
    _write_csv(p, header, rows)
    written.append(p)

    for tag, idx in (("best", report.best), ("mean", report.mean), ("worst", report.worst)):
        rec, e = report.points[idx], report.explanations[idx]
        b_model = rec.get("b_model") or [None] * len(names)
        p = out / f"{prefix}_{tag}_features.csv"
        _write_csv(p, ["feature", "b_expl", "b_model", "b_true"],
                   zip(names, rec["b_expl"], b_model, rec["b_true"]))
        written.append(p)
        p = out / f"{prefix}_{tag}_survival.csv"
        _write_csv(p, ["time", "model", "surrogate"], e.curve_rows())
        written.append(p)
    return written


def write_bench(experiment: int, reports: Sequence[ExperimentReport], out_dir) -> list[Path]:
    """Result tables (``experiment{N}_table.csv`` for Cox, ``..._rsf_table.csv``) and per-scenario files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for model, suffix in (("cox", ""), ("rsf", "_rsf")):
        rows = table_rows(experiment, reports, model)
        if not rows:
            continue
        header = list(rows[0])
        p = out / f"experiment{experiment}{suffix}_table.csv"
        _write_csv(p, header, ([r[k] for k in header] for r in rows))
        written.append(p)
    for r in reports:
        written += write_report(r, out)
    return written


def survival_gap(explanation: Explanation) -> float:
    """Largest absolute gap between black-box and surrogate survival over the grid."""
    s_bb = chf_to_survival(explanation.blackbox_chf).values
    s_sur = chf_to_survival(explanation.surrogate_chf).values
    return float(np.max(np.abs(s_bb - s_sur)))
