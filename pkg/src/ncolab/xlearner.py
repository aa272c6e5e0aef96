"""X-learner with cross-validated LASSO base learners.

Stage one fits an outcome model in each arm.  Stage two regresses the
imputed individual effects on covariates within each arm, and predictions
blend the two stage-two models with the estimated propensity::

    tau(x) = tau1(x) * (1 - pi(x)) + tau0(x) * pi(x)

Effects are risk differences ``P(Y=1 | A=1) - P(Y=1 | A=0)``; negative
values mean the treatment lowers risk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimatorError
from .glm.lasso import LassoFit, fit_lasso

MIN_ARM_SIZE = 50
PROPENSITY_CLAMP = (0.01, 0.99)


@dataclass(frozen=True)
class XLearnerFit:
    mu1: LassoFit
    mu0: LassoFit
    tau1: LassoFit
    tau0: LassoFit
    propensity: LassoFit

    def predict_cate(self, x: np.ndarray) -> np.ndarray:
        return predict_cate(self, x)


def pseudo_outcomes(
    x: np.ndarray, treatment: np.ndarray, outcome: np.ndarray, mu1: LassoFit, mu0: LassoFit
) -> np.ndarray:
    """Observed minus imputed outcome for treated rows, imputed minus observed otherwise."""
    y = np.asarray(outcome, dtype=np.float64)
    treated = np.asarray(treatment) == 1
    d = np.empty_like(y)
    d[treated] = y[treated] - mu0.predict(x[treated])
    d[~treated] = mu1.predict(x[~treated]) - y[~treated]
    return d


def fit(
    x: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    rng: np.random.Generator | None = None,
    folds: int = 10,
) -> XLearnerFit:
    """Fit all five base learners; each draws its own fold assignment."""
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(treatment)
    y = np.asarray(outcome, dtype=np.float64)
    treated = a == 1
    n1 = int(treated.sum())
    n0 = int(a.shape[0] - n1)
    if min(n1, n0) < MIN_ARM_SIZE:
        raise EstimatorError(
            f"X-learner needs at least {MIN_ARM_SIZE} rows per arm, got {n1} treated and {n0} untreated"
        )
    rng = rng if rng is not None else np.random.default_rng()
    r_mu1, r_mu0, r_tau1, r_tau0, r_pi = rng.spawn(5)
    mu1 = fit_lasso(x[treated], y[treated], "logistic", folds, r_mu1)
    mu0 = fit_lasso(x[~treated], y[~treated], "logistic", folds, r_mu0)
    d = pseudo_outcomes(x, a, y, mu1, mu0)
    tau1 = fit_lasso(x[treated], d[treated], "linear", folds, r_tau1)
    tau0 = fit_lasso(x[~treated], d[~treated], "linear", folds, r_tau0)
    propensity = fit_lasso(x, a.astype(np.float64), "logistic", folds, r_pi)
    return XLearnerFit(mu1=mu1, mu0=mu0, tau1=tau1, tau0=tau0, propensity=propensity)


def blend(tau1: np.ndarray, tau0: np.ndarray, pi: np.ndarray) -> np.ndarray:
    return tau1 * (1.0 - pi) + tau0 * pi


def predict_cate(fit: XLearnerFit, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    pi = np.clip(fit.propensity.predict(x), *PROPENSITY_CLAMP)
    return blend(fit.tau1.predict(x), fit.tau0.predict(x), pi)
