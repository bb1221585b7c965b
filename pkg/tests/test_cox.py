import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from survlime.core import Dataset, build_time_grid, nelson_aalen
from survlime.cox import (
    CoxFitError,
    CoxModel,
    ConvergenceError,
    SeparationError,
    breslow_baseline,
    fit_cox,
    partial_log_likelihood,
    partial_log_likelihood_gradient,
    partial_log_likelihood_hessian,
    predict_chf,
    predict_risk,
)
from survlime.synth import B_TRUE_0, default_specs, generate_dataset


def random_dataset(rng, n, d, ties=False):
    X = rng.normal(size=(n, d))
    t = rng.integers(1, 4, n).astype(float) if ties else rng.exponential(size=n)
    e = rng.integers(0, 2, n)
    e[0] = 1
    return Dataset(X, t, e)


def loglik_oracle(b, ds):
    """Log of the product over events of exp(b'x_j) / sum over {i: T_i >= T_j} exp(b'x_i)."""
    total = 0.0
    for j in range(ds.n):
        if ds.event[j] != 1:
            continue
        risk_set = [i for i in range(ds.n) if ds.time[i] >= ds.time[j]]
        denom = sum(math.exp(float(ds.X[i] @ b)) for i in risk_set)
        total += float(ds.X[j] @ b) - math.log(denom)
    return total


@pytest.fixture(scope="module")
def cluster0():
    return generate_dataset(default_specs()[:1], seed=2024).dataset


class TestPartialLikelihood:
    def test_zero_coefficients_distinct_times(self):
        n = 6
        ds = Dataset(np.random.default_rng(0).normal(size=(n, 2)), np.arange(1.0, n + 1),
                     np.ones(n, dtype=int))
        expected = -sum(math.log(k) for k in range(1, n + 1))
        assert partial_log_likelihood(np.zeros(2), ds) == pytest.approx(expected, rel=1e-14)

    def test_fully_censored(self):
        ds = Dataset(np.ones((3, 1)), [1.0, 2.0, 3.0], [0, 0, 0])
        assert partial_log_likelihood(np.array([0.7]), ds) == 0.0

    @pytest.mark.parametrize("ties", [False, True])
    def test_matches_risk_set_enumeration(self, ties):
        rng = np.random.default_rng(7 + ties)
        for _ in range(20):
            ds = random_dataset(rng, 4, 2, ties)
            b = rng.normal(size=2)
            assert partial_log_likelihood(b, ds) == pytest.approx(loglik_oracle(b, ds), rel=1e-12)

    def test_gradient_and_hessian_match_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-5
        for _ in range(10):
            ds = random_dataset(rng, 10, 3, ties=True)
            b = rng.normal(size=3) * 0.5
            g = partial_log_likelihood_gradient(b, ds)
            H = partial_log_likelihood_hessian(b, ds)
            eye = np.eye(3)
            g_fd = np.array([(partial_log_likelihood(b + h * e, ds)
                              - partial_log_likelihood(b - h * e, ds)) / (2 * h) for e in eye])
            H_fd = np.array([(partial_log_likelihood_gradient(b + h * e, ds)
                              - partial_log_likelihood_gradient(b - h * e, ds)) / (2 * h)
                             for e in eye])
            assert np.linalg.norm(g - g_fd) <= 1e-4 * max(np.linalg.norm(g), 1e-3)
            assert np.linalg.norm(H - H_fd) <= 1e-4 * np.linalg.norm(H)

    def test_concave(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            ds = random_dataset(rng, 10, 3, ties=True)
            H = partial_log_likelihood_hessian(rng.normal(size=3), ds)
            assert np.linalg.eigvalsh(H).max() <= 1e-8

    def test_dimension_mismatch(self):
        ds = Dataset(np.ones((2, 2)), [1.0, 2.0], [1, 1])
        with pytest.raises(ValueError):
            partial_log_likelihood(np.zeros(3), ds)


class TestFit:
    def test_null_association(self):
        rng = np.random.default_rng(99)
        n = 2000
        x = rng.integers(0, 2, (n, 1)).astype(float)
        ds = Dataset(x, rng.exponential(size=n), rng.uniform(size=n) < 0.8)
        assert abs(fit_cox(ds).coefficients[0]) < 0.1

    def test_recovers_generating_coefficients(self, cluster0):
        train = cluster0.subset(np.arange(900))
        m = fit_cox(train)
        assert np.all(np.abs(m.coefficients - np.array(B_TRUE_0)) < 0.1)

    def test_stationary_at_solution(self, cluster0):
        train = cluster0.subset(np.arange(900))
        m = fit_cox(train, tol=1e-8)
        assert np.linalg.norm(partial_log_likelihood_gradient(m.coefficients, train)) <= 1e-8

    def test_order_invariant(self, cluster0):
        train = cluster0.subset(np.arange(300))
        perm = np.random.default_rng(1).permutation(300)
        a = fit_cox(train).coefficients
        b = fit_cox(train.subset(perm)).coefficients
        assert_allclose(a, b, rtol=0, atol=1e-10)

    def test_standardized_fit_reports_original_scale(self, cluster0):
        train = cluster0.subset(np.arange(300))
        a = fit_cox(train)
        b = fit_cox(train, standardize=True)
        assert_allclose(a.coefficients, b.coefficients, atol=1e-7)
        assert_allclose(a.baseline_chf.values, b.baseline_chf.values, rtol=1e-6)

    def test_too_few_events(self):
        ds = Dataset(np.eye(3), [1.0, 2.0, 3.0], [1, 1, 0])
        with pytest.raises(CoxFitError):
            fit_cox(ds)

    def test_convergence_error_carries_iterate(self, cluster0):
        with pytest.raises(ConvergenceError) as info:
            fit_cox(cluster0.subset(np.arange(300)), max_iter=1, tol=1e-14)
        assert info.value.coefficients.shape == (5,)

    def test_separation_detected(self):
        # higher x always fails first: likelihood increases without bound
        x = np.arange(8.0)[::-1, None]
        ds = Dataset(x, np.arange(1.0, 9.0), np.ones(8, dtype=int))
        with pytest.raises(SeparationError):
            fit_cox(ds)

    def test_full_one_hot_block_is_not_separation(self):
        rng = np.random.default_rng(0)
        n = 300
        X = np.c_[np.eye(3)[rng.integers(0, 3, n)], rng.normal(size=n)]
        t = rng.exponential(size=n) * np.exp(-0.5 * X[:, 3] - 0.7 * X[:, 1])
        ds = Dataset(X, t, np.ones(n, dtype=int))
        b = fit_cox(ds).coefficients
        # only contrasts within the block are identified; the fit picks the minimum-norm one
        assert abs(b[:3].sum()) < 1e-8
        assert np.linalg.norm(partial_log_likelihood_gradient(b, ds)) <= 1e-8
        assert abs(b[3] - 0.5) < 0.15

    def test_breslow_with_zero_coefficients_is_nelson_aalen(self, cluster0):
        g = build_time_grid(cluster0)
        assert_allclose(breslow_baseline(np.zeros(5), cluster0, g).values,
                        np.maximum(nelson_aalen(cluster0, g).values, 1e-8), rtol=1e-12)


class TestPredict:
    @pytest.fixture
    def model(self, cluster0):
        return fit_cox(cluster0.subset(np.arange(400)))

    def test_zero_coefficients_give_baseline(self, model):
        m0 = CoxModel(np.zeros(5), model.baseline_chf)
        assert_allclose(predict_chf(m0, np.ones(5)).values, model.baseline_chf.values)

    def test_origin_gives_baseline(self, model):
        assert_allclose(predict_chf(model, np.zeros(5)).values, model.baseline_chf.values)

    def test_proportional_hazards(self, model):
        x = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
        r = predict_risk(model, x)
        ratio = predict_chf(model, 2 * x).values / predict_chf(model, x).values
        assert_allclose(ratio, np.exp(r), rtol=1e-12)

    def test_dot_product(self):
        g = build_time_grid(Dataset(np.zeros((1, 2)), [1.0], [1]))
        from survlime.core import StepFunction
        m = CoxModel(np.array([1.0, 2.0]), StepFunction(g, [1.0]))
        assert predict_risk(m, [3.0, -1.0]) == 1.0
        assert predict_risk(m, [0.0, 0.0]) == 0.0

    def test_risk_order_matches_chf_order(self, model):
        rng = np.random.default_rng(2)
        a, b = rng.normal(size=(2, 5)) * 3
        ha, hb = predict_chf(model, a).values, predict_chf(model, b).values
        if predict_risk(model, a) > predict_risk(model, b):
            assert np.all(ha >= hb)
        else:
            assert np.all(ha <= hb)

    def test_chf_monotone_and_clamped(self, model):
        rng = np.random.default_rng(5)
        H = model.predict_chf_matrix(rng.normal(size=(200, 5)) * 8)
        assert np.all(np.diff(H, axis=1) >= 0)
        assert np.all(H >= 1e-8)

    def test_dimension_mismatch(self, model):
        with pytest.raises(ValueError, match="dimension 5"):
            predict_risk(model, [1.0, 2.0])

    def test_json_round_trip_is_bit_exact(self, model):
        text = json.dumps(model.to_dict())
        back = CoxModel.from_dict(json.loads(text))
        assert np.array_equal(back.coefficients, model.coefficients)
        assert np.array_equal(back.baseline_chf.values, model.baseline_chf.values)
        assert back.grid == model.grid
        assert json.dumps(back.to_dict()) == text
