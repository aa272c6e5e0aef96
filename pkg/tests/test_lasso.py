import numpy as np
import pytest
from scipy.linalg import qr

from ncolab.glm.lasso import fit_lasso, kkt_residuals, lambda_max, lambda_sequence, lasso_path
from ncolab.scenarios import load_fixture
from ncolab.seeding import derive_stream
from ncolab.simgen import simulate

from .conftest import make_dataset


def _linear_data(rng, n=500, p=6):
    x = rng.standard_normal((n, p))
    y = 1.0 + x[:, 0] - 0.5 * x[:, 1] + 0.3 * rng.standard_normal(n)
    return x, y


@pytest.mark.parametrize("family", ["linear", "logistic"])
def test_lambda_max_zeroes_every_slope(rng, family):
    x, y = _linear_data(rng)
    if family == "logistic":
        y = (y > 1.0).astype(float)
    lam = lambda_max(x, y)
    path = lasso_path(x, y, family, np.array([lam, lam * 0.9]))
    # the logistic IRLS quadratic reproduces the threshold up to rounding
    assert np.max(np.abs(path[0, 1:])) < 1e-12
    assert np.max(np.abs(path[1, 1:])) > 1e-6


def test_orthonormal_design_soft_thresholds(rng):
    n, p = 400, 5
    q, _ = qr(rng.standard_normal((n, p)) - 0.0, mode="economic")
    x = q - q.mean(axis=0)
    x /= x.std(axis=0)
    # re-orthogonalize after centering so that x'x / n is exactly the identity
    q2, _ = qr(np.column_stack([np.ones(n), x]), mode="economic")
    x = q2[:, 1:] * np.sqrt(n)
    y = x @ np.array([2.0, -1.0, 0.5, 0.05, 0.0]) + 0.1 * rng.standard_normal(n)
    z = x.T @ (y - y.mean()) / n
    for lam in (0.01, 0.3, 1.2):
        path = lasso_path(x, y, "linear", np.array([lam]), tol=1e-12, standardized=True)
        expected = np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)
        np.testing.assert_allclose(path[0, 1:], expected, atol=1e-6)


@pytest.mark.parametrize("family", ["linear", "logistic"])
def test_kkt_conditions_hold_on_path(rng, family):
    x, y = _linear_data(rng, n=800, p=10)
    if family == "logistic":
        y = (rng.random(800) < 1 / (1 + np.exp(-(y - 1.0)))).astype(float)
    lambdas = lambda_sequence(lambda_max(x, y), 20, 1e-3)
    path = lasso_path(x, y, family, lambdas, tol=1e-10)
    for lam, coefs in zip(lambdas, path):
        assert np.max(kkt_residuals(x, y, family, coefs, lam)) <= 1e-6


def test_selects_strong_outcome_predictors():
    d = make_dataset("hte", "primary", seed=21)
    x = d.covariates[:, d.measured_columns()]
    y = d.outcome.astype(float)
    fit = fit_lasso(x, y, "logistic", folds=5, rng=derive_stream(1, "lasso"))
    names = [d.names[j] for j in d.measured_columns()]
    slopes = dict(zip(names, fit.coefficients[1:]))
    assert slopes["C3"] != 0.0 and slopes["C4"] != 0.0


@pytest.mark.parametrize("fixture", ["nohte_primary", "hte_small-n"])
def test_nonzero_count_monotone_in_lambda(fixture):
    d = simulate(load_fixture(fixture), derive_stream(2, fixture))
    x, y = d.covariates, d.outcome.astype(float)
    lambdas = lambda_sequence(lambda_max(x, y), 30, 1e-3)
    path = lasso_path(x, y, "logistic", lambdas)
    counts = (np.abs(path[:, 1:]) > 1e-12).sum(axis=1)
    # lasso paths are not monotone in general; the active set should grow
    # overall and never shrink by more than one variable between steps
    assert counts[0] == 0 and counts[-1] >= counts[len(counts) // 2]
    assert np.all(np.diff(counts) >= -1)


def test_cv_is_deterministic_under_seed(rng):
    x, y = _linear_data(rng)
    a = fit_lasso(x, y, "linear", rng=derive_stream(5, "cv"))
    b = fit_lasso(x, y, "linear", rng=derive_stream(5, "cv"))
    assert a.coefficients.tobytes() == b.coefficients.tobytes()
    assert a.lambda_selected == b.lambda_selected
    assert a.lambda_path[a.selected_index] == a.lambda_selected


def test_constant_response_warns():
    x = np.random.default_rng(0).standard_normal((100, 3))
    with pytest.warns(UserWarning, match="constant"):
        fit = fit_lasso(x, np.ones(100), "logistic")
    assert fit.constant_response
    assert np.all(fit.coefficients[1:] == 0.0)
    assert np.all(fit.predict(x) > 0.99)


def test_linear_predictions_close_to_ols(rng):
    x, y = _linear_data(rng, n=2000)
    fit = fit_lasso(x, y, "linear", rng=rng)
    ols = np.linalg.lstsq(np.column_stack([np.ones(2000), x]), y, rcond=None)[0]
    np.testing.assert_allclose(fit.coefficients[:3], ols[:3], atol=0.02)


def test_rejects_bad_arguments(rng):
    x, y = _linear_data(rng, n=20)
    with pytest.raises(ValueError):
        fit_lasso(x, y, "poisson")
    with pytest.raises(ValueError):
        fit_lasso(x[:5], y[:5], "linear", folds=10)
    fit = fit_lasso(x, y, "linear", folds=4, rng=rng)
    with pytest.raises(ValueError):
        fit.predict(x[:, :3])
