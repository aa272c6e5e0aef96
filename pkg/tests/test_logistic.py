import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import expit, log_expit

from ncolab.errors import RankDeficientError
from ncolab.glm.logistic import SEPARATION_BOUND, check_rank, fit_logistic, predict_proba

from .conftest import make_dataset


def _loglik(beta, x, y):
    eta = beta[0] + x @ beta[1:]
    return np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta))


def test_null_slopes_within_three_se(rng):
    x = rng.standard_normal((4000, 3))
    y = (rng.random(4000) < 0.3).astype(float)
    fit = fit_logistic(x, y)
    assert fit.converged
    assert np.all(np.abs(fit.coefficients[1:]) < 3 * fit.standard_errors[1:])


def test_small_fixture_matches_grid_search():
    # 8 rows, one covariate: the MLE is located by nested grid refinement
    x = np.array([[-1.5], [-1.0], [-0.4], [0.0], [0.3], [0.8], [1.1], [2.0]])
    y = np.array([0, 0, 1, 0, 1, 0, 1, 1], dtype=float)
    fit = fit_logistic(x, y)
    center, width = np.zeros(2), 4.0
    for _ in range(12):
        grid = [center + width * np.array(d) for d in itertools.product(np.linspace(-1, 1, 21), repeat=2)]
        center = max(grid, key=lambda b: _loglik(b, x, y))
        width /= 5
    np.testing.assert_allclose(fit.coefficients, center, atol=1e-3)


def test_recovers_treatment_model_coefficients():
    d = make_dataset("nohte", "primary", n=200_000, seed=11)
    fit = fit_logistic(d.covariates, d.treatment.astype(float))
    t = d.coefficients
    truth = np.concatenate([[t.treat_intercept], t.vector(t.treat_coefs)])
    np.testing.assert_allclose(fit.coefficients[1:], truth[1:], atol=0.05)


def test_predict_proba_shapes():
    x = np.array([[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0], [2.0, 1.0], [1.0, 3.0]])
    y = np.array([0, 1, 1, 0, 1, 0], dtype=float)
    fit = fit_logistic(x, y)
    p = predict_proba(fit, x)
    assert p.shape == (6,)
    one = predict_proba(fit, x[0])
    assert isinstance(one, float) and one == pytest.approx(p[0])
    assert fit.predict_proba(x[2:4]).shape == (2,)
    with pytest.raises(ValueError):
        predict_proba(fit, np.zeros(3))


def test_intercept_only_probability():
    from ncolab.glm.logistic import LogisticFit

    fit = LogisticFit(coefficients=np.array([0.0, 0.0]), converged=True, iterations=0, log_likelihood=0.0)
    assert predict_proba(fit, np.array([5.0])) == 0.5


def test_rank_deficiency_names_column(rng):
    x = rng.standard_normal((200, 4))
    x[:, 2] = x[:, 0] - 2 * x[:, 1]
    y = (rng.random(200) < 0.5).astype(float)
    with pytest.raises(RankDeficientError) as err:
        fit_logistic(x, y)
    assert err.value.column in (0, 1, 2)
    assert str(err.value.column) in str(err.value)


def test_constant_column_is_collinear_with_intercept(rng):
    x = np.column_stack([rng.standard_normal(100), np.full(100, 3.0)])
    with pytest.raises(RankDeficientError) as err:
        check_rank(x)
    assert err.value.column == 1


def test_separation_flagged():
    x = np.linspace(-2, 2, 40)[:, None]
    y = (x[:, 0] > 0).astype(float)
    fit = fit_logistic(x, y)
    assert fit.separated and not fit.converged
    assert np.max(np.abs(fit.coefficients[1:])) > SEPARATION_BOUND


def test_ridge_handles_separation():
    x = np.linspace(-2, 2, 40)[:, None]
    y = (x[:, 0] > 0).astype(float)
    fit = fit_logistic(x, y, ridge=1e-6)
    assert fit.ridge == 1e-6
    assert np.all(np.isfinite(fit.coefficients))


@given(seed=st.integers(0, 10_000), n=st.integers(30, 300), p=st.integers(1, 4))
def test_log_likelihood_monotone_and_kkt(seed, n, p):
    r = np.random.default_rng(seed)
    x = r.standard_normal((n, p))
    beta = r.normal(0, 0.7, p + 1)
    y = (r.random(n) < expit(beta[0] + x @ beta[1:])).astype(float)
    fit = fit_logistic(x, y)
    trace = np.array(fit.log_likelihood_trace)
    assert np.all(np.diff(trace) >= -1e-9 * np.maximum(1.0, np.abs(trace[1:])))
    if fit.converged:
        xf = np.column_stack([np.ones(n), x])
        grad = xf.T @ (y - expit(xf @ fit.coefficients))
        assert np.max(np.abs(grad)) <= 1e-6


def test_bad_shapes():
    with pytest.raises(ValueError):
        fit_logistic(np.zeros((5, 5)), np.zeros(5))
    with pytest.raises(ValueError):
        fit_logistic(np.zeros((5, 1)), np.zeros(4))
