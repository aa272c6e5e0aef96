"""L1-penalized linear and logistic regression with K-fold cross-validated lambda.

Predictors are standardized internally (population sd) and the intercept is
unpenalized.  The objective per observation is

    linear:    (1/2n) ||y - b0 - X b||^2 + lambda ||b||_1
    logistic: -(1/n) loglik(b0, b)       + lambda ||b||_1

Coefficients are solved by cyclic coordinate descent on the Gram form of the
(weighted) least-squares problem; the logistic family wraps it in penalized
IRLS.  All lambdas refer to the standardized scale.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import expit, log_expit

FAMILIES = ("linear", "logistic")
_W_FLOOR = 1e-5


@dataclass(frozen=True)
class LassoFit:
    family: str
    coefficients: np.ndarray
    lambda_selected: float
    lambda_path: np.ndarray
    cv_errors: np.ndarray
    fold_count: int
    path_coefficients: np.ndarray = field(repr=False)
    cv_std_errors: np.ndarray = field(repr=False)
    x_mean: np.ndarray = field(repr=False)
    x_scale: np.ndarray = field(repr=False)
    constant_response: bool = False

    @property
    def selected_index(self) -> int:
        return int(np.flatnonzero(self.lambda_path == self.lambda_selected)[0])

    def linear_predictor(self, design: np.ndarray) -> np.ndarray:
        x = np.asarray(design, dtype=np.float64)
        if x.shape[-1] != self.coefficients.shape[0] - 1:
            raise ValueError(
                f"expected {self.coefficients.shape[0] - 1} covariates, got {x.shape[-1]}"
            )
        return self.coefficients[0] + x @ self.coefficients[1:]

    def predict(self, design: np.ndarray) -> np.ndarray:
        """Fitted mean: probabilities for the logistic family."""
        eta = self.linear_predictor(design)
        return expit(eta) if self.family == "logistic" else eta


@njit(cache=True)
def _cd_quadratic(gram, lin, beta, lam, tol, max_sweeps):
    """Minimize 0.5 b'Gb - lin'b + lam*||b||_1 in place; returns sweeps used."""
    p = beta.shape[0]
    resid = lin - gram @ beta
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            gjj = gram[j, j]
            if gjj <= 0.0:
                continue
            old = beta[j]
            z = resid[j] + gjj * old
            if z > lam:
                new = (z - lam) / gjj
            elif z < -lam:
                new = (z + lam) / gjj
            else:
                new = 0.0
            if new != old:
                d = new - old
                for k in range(p):
                    resid[k] -= gram[k, j] * d
                beta[j] = new
                change = abs(d) * np.sqrt(gjj)
                if change > max_change:
                    max_change = change
        if max_change < tol:
            return sweep + 1
    return max_sweeps


def _standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    safe = np.where(scale > 0, scale, 1.0)
    xs = (x - mean) / safe
    xs[:, scale == 0] = 0.0
    return xs, mean, scale


def lambda_max(design: np.ndarray, response: np.ndarray) -> float:
    """Smallest lambda at which every slope is zero (either family)."""
    xs, _, _ = _standardize(np.asarray(design, dtype=np.float64))
    y = np.asarray(response, dtype=np.float64)
    return float(np.max(np.abs(xs.T @ (y - y.mean()))) / y.shape[0])


def lambda_sequence(lam_max: float, n_lambda: int = 100, min_ratio: float = 1e-4) -> np.ndarray:
    return lam_max * np.logspace(0.0, np.log10(min_ratio), n_lambda)


def _linear_path(xs, y, lambdas, tol):
    n, p = xs.shape
    ybar = y.mean()
    gram = xs.T @ xs / n
    lin = xs.T @ (y - ybar) / n
    beta = np.zeros(p)
    path = np.empty((lambdas.shape[0], p + 1))
    for k, lam in enumerate(lambdas):
        _cd_quadratic(gram, lin, beta, lam, tol * 1e-3, 10_000)
        path[k, 0] = ybar
        path[k, 1:] = beta
    return path


def _logistic_path(xs, y, lambdas, tol, max_irls=100):
    n, p = xs.shape
    ybar = y.mean()
    b0 = np.log(ybar / (1.0 - ybar))
    beta = np.zeros(p)
    path = np.empty((lambdas.shape[0], p + 1))
    for k, lam in enumerate(lambdas):
        for _ in range(max_irls):
            eta = b0 + xs @ beta
            mu = expit(eta)
            w = np.maximum(mu * (1.0 - mu), _W_FLOOR)
            wz = w * eta + (y - mu)
            sw = w.sum()
            xbar = (w @ xs) / sw
            zbar = wz.sum() / sw
            gram = (xs * w[:, None]).T @ xs / n - (sw / n) * np.outer(xbar, xbar)
            lin = (xs.T @ wz - sw * xbar * zbar) / n
            old_b0, old_beta = b0, beta.copy()
            _cd_quadratic(gram, lin, beta, lam, tol * 1e-3, 10_000)
            b0 = zbar - xbar @ beta
            change = max(abs(b0 - old_b0), np.max(np.abs(beta - old_beta), initial=0.0))
            if change < tol:
                break
        path[k, 0] = b0
        path[k, 1:] = beta
    return path


def _to_original_scale(path_std, mean, scale):
    safe = np.where(scale > 0, scale, 1.0)
    slopes = np.where(scale > 0, path_std[:, 1:] / safe, 0.0)
    intercept = path_std[:, 0] - slopes @ mean
    return np.column_stack([intercept, slopes])


def lasso_path(
    design: np.ndarray,
    response: np.ndarray,
    family: str,
    lambdas: np.ndarray,
    tol: float = 1e-7,
    standardized: bool = False,
) -> np.ndarray:
    """Coefficient path, one row ``[b0, b1..bp]`` per lambda, warm-started in order.

    Returned on the original predictor scale unless ``standardized``.
    """
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    xs, mean, scale = _standardize(x)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    if family == "logistic" and (y.min() == y.max()):
        path = np.zeros((lambdas.shape[0], x.shape[1] + 1))
        path[:, 0] = _constant_logit(y.mean())
    elif family == "linear":
        path = _linear_path(xs, y, lambdas, tol)
    else:
        path = _logistic_path(xs, y, lambdas, tol)
    return path if standardized else _to_original_scale(path, mean, scale)


def _constant_logit(ybar: float) -> float:
    q = min(max(ybar, _W_FLOOR), 1.0 - _W_FLOOR)
    return float(np.log(q / (1.0 - q)))


def _fold_errors(family, coefs, x, y):
    eta = coefs[:, :1].T + x @ coefs[:, 1:].T
    if family == "linear":
        return ((y[:, None] - eta) ** 2).mean(axis=0)
    ll = y[:, None] * log_expit(eta) + (1 - y[:, None]) * log_expit(-eta)
    return -2.0 * ll.mean(axis=0)


def fit_lasso(
    design: np.ndarray,
    response: np.ndarray,
    family: str,
    folds: int = 10,
    rng: np.random.Generator | None = None,
    n_lambda: int = 100,
    lambda_min_ratio: float = 1e-4,
    tol: float = 1e-7,
) -> LassoFit:
    """Lasso with lambda chosen at the minimum mean cross-validated error."""
    if family not in FAMILIES:
        raise ValueError(f"family must be one of {FAMILIES}")
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    n, p = x.shape
    if not n >= folds >= 2:
        raise ValueError(f"need n >= folds >= 2, got n={n}, folds={folds}")
    rng = rng if rng is not None else np.random.default_rng()
    xs, mean, scale = _standardize(x)

    lam_max = float(np.max(np.abs(xs.T @ (y - y.mean()))) / n) if p else 0.0
    if y.min() == y.max() or lam_max == 0.0:
        warnings.warn("lasso response is constant; returning intercept-only fit", stacklevel=2)
        b0 = y.mean() if family == "linear" else _constant_logit(y.mean())
        coefs = np.zeros(p + 1)
        coefs[0] = b0
        lambdas = np.array([max(lam_max, np.finfo(float).tiny)])
        return LassoFit(
            family=family,
            coefficients=coefs,
            lambda_selected=float(lambdas[0]),
            lambda_path=lambdas,
            cv_errors=np.zeros(1),
            fold_count=folds,
            path_coefficients=coefs[None, :],
            cv_std_errors=np.zeros(1),
            x_mean=mean,
            x_scale=scale,
            constant_response=True,
        )

    lambdas = lambda_sequence(lam_max, n_lambda, lambda_min_ratio)
    fold_id = rng.permutation(n) % folds
    errors = np.empty((folds, lambdas.shape[0]))
    sizes = np.empty(folds)
    for k in range(folds):
        held = fold_id == k
        coefs = lasso_path(x[~held], y[~held], family, lambdas, tol)
        errors[k] = _fold_errors(family, coefs, x[held], y[held])
        sizes[k] = held.sum()
    weights = sizes / sizes.sum()
    cv = weights @ errors
    cv_se = np.sqrt((weights @ (errors - cv) ** 2) / max(folds - 1, 1))
    best = int(np.argmin(cv))

    if family == "linear":
        path_std = _linear_path(xs, y, lambdas, tol)
    else:
        path_std = _logistic_path(xs, y, lambdas, tol)
    path = _to_original_scale(path_std, mean, scale)
    return LassoFit(
        family=family,
        coefficients=path[best].copy(),
        lambda_selected=float(lambdas[best]),
        lambda_path=lambdas,
        cv_errors=cv,
        fold_count=folds,
        path_coefficients=path,
        cv_std_errors=cv_se,
        x_mean=mean,
        x_scale=scale,
    )


def kkt_residuals(
    design: np.ndarray, response: np.ndarray, family: str, coefficients: np.ndarray, lam: float
) -> np.ndarray:
    """Per-slope KKT violation on the standardized scale (zero when optimal).

    ``g_j`` is the negative loss gradient for standardized predictor ``j``; at
    the optimum ``|g_j| <= lam`` when the slope is zero and ``g_j == lam *
    sign(b_j)`` otherwise.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    xs, _, scale = _standardize(x)
    eta = coefficients[0] + x @ coefficients[1:]
    fitted = expit(eta) if family == "logistic" else eta
    g = xs.T @ (y - fitted) / y.shape[0]
    b_std = coefficients[1:] * scale
    return np.where(
        b_std == 0.0,
        np.maximum(np.abs(g) - lam, 0.0),
        np.abs(g - lam * np.sign(b_std)),
    )
