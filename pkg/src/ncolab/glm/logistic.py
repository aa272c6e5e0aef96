"""Maximum-likelihood logistic regression by iteratively reweighted least squares."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.special import expit, log_expit

from ..errors import RankDeficientError

SEPARATION_BOUND = 30.0


@dataclass(frozen=True)
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    log_likelihood: float
    separated: bool = False
    ridge: float = 0.0
    covariance: np.ndarray | None = None
    log_likelihood_trace: tuple[float, ...] = ()

    @property
    def standard_errors(self) -> np.ndarray:
        if self.covariance is None:
            raise ValueError("covariance was not computed for this fit")
        return np.sqrt(np.diag(self.covariance))

    def predict_proba(self, design: np.ndarray) -> np.ndarray:
        return predict_proba(self, design)


def check_rank(design: np.ndarray, rtol: float = 1e-10) -> None:
    """Raise ``RankDeficientError`` naming the first column found collinear.

    Column ``-1`` stands for the implicit intercept.
    """
    full = np.column_stack([np.ones(design.shape[0]), design])
    scale = np.linalg.norm(full, axis=0)
    if np.any(scale == 0):
        raise RankDeficientError(int(np.argmin(scale)) - 1, "design has an all-zero column")
    _, r, piv = scipy.linalg.qr(full / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    bad = np.nonzero(diag <= rtol * diag[0])[0]
    if bad.size:
        col = int(piv[bad[0]]) - 1
        raise RankDeficientError(col, f"design column {col} is collinear with earlier columns")


def fit_logistic(
    design: np.ndarray,
    response: np.ndarray,
    tol: float = 1e-8,
    max_iter: int = 100,
    ridge: float = 0.0,
    check_collinearity: bool = True,
) -> LogisticFit:
    """Logistic MLE via Newton/IRLS with step halving.

    ``ridge`` adds ``ridge/2 * ||slopes||^2`` to the negative log-likelihood;
    the intercept is never penalized.  Fits whose coefficients drift past
    ``SEPARATION_BOUND`` are returned with ``converged=False, separated=True``.
    """
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0],):
        raise ValueError("design must be 2-D with one row per response")
    n, p = x.shape
    if n <= p:
        raise ValueError(f"need more rows than columns, got n={n}, p={p}")
    if check_collinearity and ridge == 0.0:
        check_rank(x)
    xf = np.column_stack([np.ones(n), x])
    penalty = np.full(p + 1, ridge)
    penalty[0] = 0.0

    def objective(b):
        eta = xf @ b
        ll = float(np.sum(y * log_expit(eta) + (1 - y) * log_expit(-eta)))
        return ll - 0.5 * float(np.sum(penalty * b * b)), ll

    beta = np.zeros(p + 1)
    ybar = y.mean()
    if 0.0 < ybar < 1.0:
        beta[0] = np.log(ybar / (1 - ybar))
    obj, ll = objective(beta)
    trace = [ll]
    converged = separated = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(xf @ beta)
        w = mu * (1 - mu)
        grad = xf.T @ (y - mu) - penalty * beta
        hess = (xf * w[:, None]).T @ xf + np.diag(penalty)
        try:
            with warnings.catch_warnings():
                # near-separated subgroups give ill-conditioned Hessians; the
                # step-halving search and separation bound handle them
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                step = scipy.linalg.solve(hess, grad, assume_a="pos")
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(30):
            cand = beta + t * step
            cand_obj, cand_ll = objective(cand)
            if cand_obj >= obj - 1e-10 * max(1.0, abs(obj)):
                break
            t *= 0.5
        beta, obj, ll = cand, cand_obj, cand_ll
        trace.append(ll)
        if np.max(np.abs(beta[1:]), initial=0.0) > SEPARATION_BOUND:
            separated = True
            break
        if np.max(np.abs(t * step)) < tol:
            mu = expit(xf @ beta)
            grad = xf.T @ (y - mu) - penalty * beta
            converged = bool(np.max(np.abs(grad)) <= 1e-6)
            if converged:
                break
    cov = None
    if not separated:
        mu = expit(xf @ beta)
        hess = (xf * (mu * (1 - mu))[:, None]).T @ xf + np.diag(penalty)
        try:
            cov = np.linalg.inv(hess)
        except np.linalg.LinAlgError:
            cov = None
    return LogisticFit(
        coefficients=beta,
        converged=converged,
        iterations=it,
        log_likelihood=ll,
        separated=separated,
        ridge=ridge,
        covariance=cov,
        log_likelihood_trace=tuple(trace),
    )


def predict_proba(fit: LogisticFit, design_row: np.ndarray) -> np.ndarray | float:
    """``expit(intercept + x @ slopes)`` for one row or a matrix of rows."""
    x = np.asarray(design_row, dtype=np.float64)
    slopes = fit.coefficients[1:]
    if x.shape[-1] != slopes.shape[0]:
        raise ValueError(f"expected {slopes.shape[0]} covariates, got {x.shape[-1]}")
    p = expit(fit.coefficients[0] + x @ slopes)
    return float(p) if np.ndim(p) == 0 else p
