"""Acceptance criteria, each at its stated tolerance.

A summary line per criterion is printed at the end of the pytest run.
"""

import itertools
import math
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from survlime.bench import _run_group, experiment_scenarios, run_bench
from survlime.cli import DEFAULT_SEED
from survlime.core import Dataset, TimeGrid, build_time_grid, concordance_index, nelson_aalen
from survlime.cox import fit_cox, partial_log_likelihood, partial_log_likelihood_gradient
from survlime.explainer import ExplainConfig, assemble_problem, curvature_weights, explain
from survlime.synth import default_specs, generate_dataset

SEEDS = (0, 1, 2, 3, 4)


def _median(values):
    return float(np.median(values))


@pytest.fixture(scope="module")
def bench1_runs(tmp_path_factory):
    """``survlime bench --experiment 1 --seed 7`` run twice into separate directories."""
    root = tmp_path_factory.mktemp("bench1")
    runs, seconds = [], []
    for name in ("a", "b"):
        out = root / name
        t0 = time.perf_counter()
        r = subprocess.run([sys.executable, "-m", "survlime.cli", "bench", "--experiment", "1",
                            "--seed", "7", "--out", str(out)], capture_output=True, text=True)
        seconds.append(time.perf_counter() - t0)
        assert r.returncode == 0, r.stderr
        runs.append(out)
    yield runs, seconds
    shutil.rmtree(root, ignore_errors=True)


@pytest.fixture(scope="module")
def exp1_cox():
    t0 = time.perf_counter()
    reports = _run_group([s for s in experiment_scenarios(1) if s.model == "cox"],
                         seed=DEFAULT_SEED)
    return reports, time.perf_counter() - t0


def test_c1_exact_recovery(criterion):
    t0 = time.perf_counter()
    data = generate_dataset(default_specs()[:1], seed=7).dataset
    model = fit_cox(data.subset(np.arange(900)))
    rng = np.random.default_rng(7)
    worst = 0.0
    for i, k in enumerate(rng.choice(data.n, 20, replace=False)):
        e = explain(model, data.X[k], model.baseline_chf, config=ExplainConfig(seed=i))
        worst = max(worst, float(np.max(np.abs(e.coefficients - model.coefficients))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 10
    criterion("1 exact recovery", ok,
              f"max |b_expl - b_model| = {worst:.2e} (<= 1e-6), {elapsed:.1f}s (< 10s)")
    assert ok


def test_c2_homogeneous_clusters(criterion, exp1_cox):
    reports, elapsed = exp1_cox
    homo = [r for r in reports if r.scenario.train_clusters == (r.scenario.test_cluster,)]
    parts, ok = [], elapsed < 300
    for r in homo:
        ok &= r.rmse_model <= 0.1 and r.rmse_true <= 0.15
        parts.append(f"cluster {r.scenario.test_cluster}: RMSE_model={r.rmse_model:.4f} "
                     f"RMSE_true={r.rmse_true:.4f}")
    criterion("2 experiment 1 homogeneous", ok,
              "; ".join(parts) + f" (<= 0.1 / <= 0.15), {elapsed:.0f}s (< 300s)")
    assert ok


def test_c3_mixed_training(criterion, exp1_cox):
    reports, _ = exp1_cox
    mixed = [r for r in reports if r.scenario.train_clusters == (0, 1)]
    ok, parts = True, []
    for r in mixed:
        ok &= r.rmse_model <= 0.1 and r.rmse_true > r.rmse_model
        parts.append(f"test {r.scenario.test_cluster}: RMSE_model={r.rmse_model:.4f} "
                     f"RMSE_true={r.rmse_true:.4f}")
    criterion("3 experiment 1 mixed", ok,
              "; ".join(parts) + " (RMSE_model <= 0.1 < RMSE_true)")
    assert ok


def test_c4_experiment2_trend(criterion):
    by_size = {}
    for seed in SEEDS:
        for r in run_bench(2, seed):
            by_size.setdefault(r.scenario.train_size, []).append(r)
    c = {n: _median([r.c_index for r in rs]) for n, rs in by_size.items()}
    rt = {n: _median([r.rmse_true for r in rs]) for n, rs in by_size.items()}
    c_ok = abs(c[100] - 0.78) <= 0.05 and abs(c[500] - 0.84) <= 0.05 and c[500] > c[100]
    rt_ok = rt[500] < rt[100]
    ok = c_ok and rt_ok
    criterion("4 experiment 2 trend", ok,
              "median C-index " + ", ".join(f"{n}:{c[n]:.3f}" for n in sorted(c))
              + " (0.78 -> 0.84 +/- 0.05); median RMSE_true "
              + f"100:{rt[100]:.3f} 500:{rt[500]:.3f} (decreasing)")
    assert ok


def test_c5_experiment3_trend(criterion):
    scenarios = [s for s in experiment_scenarios(3) if s.model == "cox"]
    by_size = {}
    for seed in SEEDS:
        for r in _run_group(scenarios, seed):
            by_size.setdefault(r.scenario.train_size, []).append(r)
    rm = {n: _median([r.rmse_model for r in rs]) for n, rs in by_size.items()}
    c40 = _median([r.c_index for r in by_size[40]])
    ok = rm[10] > 0.15 and rm[40] < 0.1 and abs(c40 - 0.733) <= 0.1
    criterion("5 experiment 3 trend", ok,
              "median RMSE_model " + ", ".join(f"{n}:{rm[n]:.4f}" for n in sorted(rm))
              + f" (10: > 0.15, 40: < 0.1); median C-index at 40 = {c40:.3f} (0.733 +/- 0.1)")
    assert ok


def test_c6_rsf_survival_gap(criterion, bench1_runs):
    runs, _ = bench1_runs
    path = runs[0] / "rsf_train0_test0_n900_mean_survival.csv"
    table = np.loadtxt(path, delimiter=",", skiprows=1)
    gap = float(np.max(np.abs(table[:, 1] - table[:, 2])))
    ok = gap <= 0.15
    criterion("6 RSF survival approximation", ok,
              f"max |S_surrogate - S_RSF| at the mean test point = {gap:.4f} (<= 0.15)")
    assert ok


def _na_oracle(times, events, grid_times):
    out = []
    for tj in grid_times:
        h = 0.0
        for ti in sorted({t for t, e in zip(times, events) if e == 1 and t <= tj}):
            d = sum(1 for t, e in zip(times, events) if t == ti and e == 1)
            h += d / sum(1 for t in times if t >= ti)
        out.append(h)
    return np.array(out)


def _c_oracle(risk, t, e):
    num = den = 0.0
    for i, j in itertools.product(range(len(t)), repeat=2):
        if t[i] < t[j] and e[i] == 1:
            den += 1
            num += 1.0 if risk[i] > risk[j] else 0.5 if risk[i] == risk[j] else 0.0
    return num / den


def test_c7_oracle_suites(criterion):
    # Nelson-Aalen: every multiset of (time in {1,2,3}, event) with up to 6 samples
    cells = [(t, e) for t in (1.0, 2.0, 3.0) for e in (0, 1)]
    na_err, na_count = 0.0, 0
    for n in range(1, 7):
        for combo in itertools.combinations_with_replacement(cells, n):
            times, events = zip(*combo)
            if not any(events):
                continue
            ds = Dataset(np.zeros((n, 1)), times, events)
            g = build_time_grid(ds)
            na_err = max(na_err, float(np.max(np.abs(
                nelson_aalen(ds, g).values - _na_oracle(times, events, g.event_times)))))
            na_count += 1

    rng = np.random.default_rng(77)
    c_err = 0.0
    for _ in range(100):
        t = rng.integers(1, 8, 10).astype(float)
        e = rng.integers(0, 2, 10)
        e[np.argmin(t)] = 1
        t[np.argmin(t)] -= 0.5
        risk = rng.integers(0, 5, 10).astype(float)
        c_err = max(c_err, abs(concordance_index(risk, Dataset(np.zeros((10, 1)), t, e))
                               - _c_oracle(risk, t, e)))

    g_err, h = 0.0, 1e-5
    for _ in range(20):
        ds = Dataset(rng.normal(size=(12, 3)), rng.integers(1, 5, 12).astype(float),
                     np.r_[1, rng.integers(0, 2, 11)])
        b = rng.normal(size=3) * 0.5
        g = partial_log_likelihood_gradient(b, ds)
        fd = np.array([(partial_log_likelihood(b + h * u, ds)
                        - partial_log_likelihood(b - h * u, ds)) / (2 * h) for u in np.eye(3)])
        g_err = max(g_err, float(np.linalg.norm(g - fd) / max(np.linalg.norm(g), 1e-3)))

    grid = TimeGrid(np.cumsum(rng.uniform(0.1, 1.0, 6)), 0.05)
    pts = rng.normal(size=(25, 4))
    w = rng.uniform(0, 1, 25)
    H = np.cumsum(rng.uniform(0.01, 0.8, (25, 6)), axis=1)
    H0 = np.cumsum(rng.uniform(0.01, 0.5, 6))
    prob = assemble_problem(pts, w, H, H0, grid)
    v = curvature_weights(H)
    q_err = 0.0
    for _ in range(20):
        b = rng.normal(size=4)
        direct = 0.0
        for k in range(25):
            for j in range(6):
                a = math.log(H[k, j]) - math.log(H0[j]) - float(pts[k] @ b)
                direct += w[k] * v[k, j] ** 2 * a * a * grid.widths[j]
        q_err = max(q_err, abs(prob.objective(b) - direct) / abs(direct))

    ok = na_err <= 1e-15 and c_err <= 1e-12 and g_err <= 1e-4 and q_err <= 1e-9
    criterion("7 oracle suites", ok,
              f"Nelson-Aalen max err {na_err:.1e} over {na_count} datasets; "
              f"C-index max err {c_err:.1e} over 100; gradient rel err {g_err:.1e} (<= 1e-4); "
              f"quadratic rel err {q_err:.1e} (<= 1e-9)")
    assert ok


def test_c8_bench_determinism(criterion, bench1_runs):
    (a, b), seconds = bench1_runs
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    differing = [f for f in files_a if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = files_a == files_b and not differing and len(files_a) > 0
    criterion("8 bench determinism", ok,
              f"{len(files_a)} report files, {len(differing)} differ "
              f"(runs took {seconds[0]:.0f}s and {seconds[1]:.0f}s)")
    assert ok
