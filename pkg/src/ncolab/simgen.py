"""Synthetic populations from the three logistic data-generating models.

Covariates are drawn independently from their marginals, treatment and the
two outcomes come from logistic models whose intercepts are calibrated by
bisection to the target prevalences on each generated population.
"""

from __future__ import annotations

import dataclasses
import enum
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError

BISECTION_BRACKET = (-20.0, 20.0)
INTERACTION_TERMS = ("C11", "C12", "C13")


class Scenario(str, enum.Enum):
    TRUE_HTE = "TrueHTE"
    NO_HTE = "NoHTE"


class Setting(str, enum.Enum):
    PRIMARY = "Primary"
    WEAKER_CONFOUNDING = "WeakerConfounding"
    SMALL_SAMPLE = "SmallSample"
    RELAXED_NCO = "RelaxedNCO"


@dataclass(frozen=True)
class CovariateDef:
    name: str
    kind: str
    prevalence: float | None = None
    mean: float | None = None
    sd: float | None = None
    measured: bool = True

    def validate(self) -> None:
        if self.kind == "binary":
            if self.prevalence is None or not 0.0 < self.prevalence < 1.0:
                raise ConfigError(
                    f"{self.name}: binary prevalence must lie in (0, 1), got {self.prevalence}"
                )
            if self.mean is not None or self.sd is not None:
                raise ConfigError(f"{self.name}: binary covariates take no mean/sd")
        elif self.kind == "continuous":
            if self.mean is None or self.sd is None or not self.sd > 0:
                raise ConfigError(f"{self.name}: continuous covariates need mean and sd > 0")
            if self.prevalence is not None:
                raise ConfigError(f"{self.name}: continuous covariates take no prevalence")
        else:
            raise ConfigError(f"{self.name}: unknown covariate kind {self.kind!r}")


@dataclass(frozen=True)
class CoefficientTable:
    """Coefficients of the treatment, outcome and NCO models.

    Intercepts are ``None`` until calibrated against a population.
    """

    covariates: tuple[CovariateDef, ...]
    treat_coefs: Mapping[str, float]
    outcome_coefs: Mapping[str, float]
    nco_coefs: Mapping[str, float]
    treatment_effect: float
    interaction_coefs: Mapping[str, float] = field(default_factory=dict)
    treat_intercept: float | None = None
    outcome_intercept: float | None = None
    nco_intercept: float | None = None
    target_treat_prev: float = 0.40
    target_outcome_inc: float = 0.30
    target_nco_inc: float = 0.50

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.covariates]

    @property
    def u_index(self) -> int:
        return next(i for i, c in enumerate(self.covariates) if not c.measured)

    def validate(self) -> None:
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigError("duplicate covariate names")
        for cov in self.covariates:
            cov.validate()
        if sum(not c.measured for c in self.covariates) != 1:
            raise ConfigError("exactly one covariate must be unmeasured")
        for label, coefs in (
            ("treatment", self.treat_coefs),
            ("outcome", self.outcome_coefs),
            ("nco", self.nco_coefs),
        ):
            unknown = set(coefs) - set(names)
            if unknown:
                raise ConfigError(f"{label} coefficients name unknown covariates {sorted(unknown)}")
            missing = [n for n in names if n not in coefs]
            if missing:
                raise ConfigError(f"{label} model is missing coefficients for {missing}")
        unknown = set(self.interaction_coefs) - set(names)
        if unknown:
            raise ConfigError(f"interaction terms name unknown covariates {sorted(unknown)}")
        for label, target in (
            ("target_treat_prev", self.target_treat_prev),
            ("target_outcome_inc", self.target_outcome_inc),
            ("target_nco_inc", self.target_nco_inc),
        ):
            if not 0.0 < target < 1.0:
                raise ConfigError(f"{label} must lie in (0, 1)")

    def vector(self, coefs: Mapping[str, float]) -> np.ndarray:
        return np.array([float(coefs[n]) for n in self.names])

    def interaction_vector(self) -> np.ndarray:
        return np.array([float(self.interaction_coefs.get(n, 0.0)) for n in self.names])


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: Scenario
    setting: Setting
    n: int
    coefficients: CoefficientTable
    replications: int = 500
    master_seed: int = 20240501

    @property
    def spec_id(self) -> str:
        return f"{self.scenario.value}-{self.setting.value}"

    def validate(self) -> None:
        if self.n < 1000:
            raise ConfigError(f"n must be at least 1000, got {self.n}")
        if self.replications < 1:
            raise ConfigError("replications must be positive")
        self.coefficients.validate()
        if self.scenario is Scenario.NO_HTE and any(
            v != 0 for v in self.coefficients.interaction_coefs.values()
        ):
            raise ConfigError("NoHTE requires all interaction coefficients to be zero")


@dataclass(frozen=True)
class SimDataset:
    covariates: np.ndarray
    names: tuple[str, ...]
    treatment: np.ndarray
    outcome: np.ndarray
    nco: np.ndarray
    true_ite: np.ndarray
    u_column_index: int
    coefficients: CoefficientTable

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    def measured_columns(self) -> list[int]:
        return [j for j in range(len(self.names)) if j != self.u_column_index]

    def subset(self, rows: np.ndarray) -> SimDataset:
        return dataclasses.replace(
            self,
            covariates=self.covariates[rows],
            treatment=self.treatment[rows],
            outcome=self.outcome[rows],
            nco=self.nco[rows],
            true_ite=self.true_ite[rows],
        )


def gen_covariates(spec: ScenarioSpec, rng: np.random.Generator) -> np.ndarray:
    spec.validate()
    n = spec.n
    columns = []
    for cov in spec.coefficients.covariates:
        if cov.kind == "binary":
            columns.append((rng.random(n) < cov.prevalence).astype(np.float64))
        else:
            columns.append(rng.normal(cov.mean, cov.sd, n))
    return np.column_stack(columns)


def calibrate_intercept(linear_predictors: np.ndarray, target: float) -> float:
    """Intercept ``c`` with ``mean(expit(c + linear_predictors)) == target``.

    The mean probability is strictly increasing in ``c``, so bisection on a
    fixed bracket always converges.
    """
    lp = np.asarray(linear_predictors, dtype=np.float64)
    if lp.size < 1000:
        raise ValueError("calibration needs at least 1000 linear predictors")
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    if np.ptp(lp) == 0.0:
        return float(logit(target) - lp[0])
    lo, hi = BISECTION_BRACKET
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expit(mid + lp).mean() < target:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12:
            break
    return 0.5 * (lo + hi)


def treatment_linear_predictor(covariates: np.ndarray, coefficients: CoefficientTable) -> np.ndarray:
    return covariates @ coefficients.vector(coefficients.treat_coefs)


def outcome_linear_predictor(
    covariates: np.ndarray, treatment: np.ndarray | float, coefficients: CoefficientTable
) -> np.ndarray:
    """Outcome log-odds without the intercept."""
    base = covariates @ coefficients.vector(coefficients.outcome_coefs)
    modifier = coefficients.treatment_effect + covariates @ coefficients.interaction_vector()
    return base + np.asarray(treatment, dtype=np.float64) * modifier


def nco_linear_predictor(covariates: np.ndarray, coefficients: CoefficientTable) -> np.ndarray:
    return covariates @ coefficients.vector(coefficients.nco_coefs)


def _require(value: float | None, name: str) -> float:
    if value is None:
        raise ConfigError(f"{name} has not been calibrated")
    return value


def _bernoulli(p: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return (rng.random(p.shape[0]) < p).astype(np.int8)


def gen_treatment(
    covariates: np.ndarray, coefficients: CoefficientTable, rng: np.random.Generator
) -> np.ndarray:
    coefficients.validate()
    b0 = _require(coefficients.treat_intercept, "treat_intercept")
    return _bernoulli(expit(b0 + treatment_linear_predictor(covariates, coefficients)), rng)


def gen_outcome(
    covariates: np.ndarray,
    treatment: np.ndarray,
    coefficients: CoefficientTable,
    rng: np.random.Generator,
) -> np.ndarray:
    coefficients.validate()
    b0 = _require(coefficients.outcome_intercept, "outcome_intercept")
    lp = b0 + outcome_linear_predictor(covariates, treatment, coefficients)
    return _bernoulli(expit(lp), rng)


def gen_nco(
    covariates: np.ndarray, coefficients: CoefficientTable, rng: np.random.Generator
) -> np.ndarray:
    coefficients.validate()
    b0 = _require(coefficients.nco_intercept, "nco_intercept")
    return _bernoulli(expit(b0 + nco_linear_predictor(covariates, coefficients)), rng)


def true_ite(covariates: np.ndarray, coefficients: CoefficientTable) -> np.ndarray:
    """Risk difference ``P(Y=1 | A=1, x) - P(Y=1 | A=0, x)`` under the known model."""
    b0 = _require(coefficients.outcome_intercept, "outcome_intercept")
    eta0 = b0 + outcome_linear_predictor(covariates, 0.0, coefficients)
    eta1 = b0 + outcome_linear_predictor(covariates, 1.0, coefficients)
    return expit(eta1) - expit(eta0)


def calibrate_table(
    covariates: np.ndarray, treatment: np.ndarray | None, coefficients: CoefficientTable
) -> CoefficientTable:
    """Fill in whichever intercepts can be calibrated from data at hand."""
    updates = {
        "treat_intercept": calibrate_intercept(
            treatment_linear_predictor(covariates, coefficients), coefficients.target_treat_prev
        ),
        "nco_intercept": calibrate_intercept(
            nco_linear_predictor(covariates, coefficients), coefficients.target_nco_inc
        ),
    }
    if treatment is not None:
        updates["outcome_intercept"] = calibrate_intercept(
            outcome_linear_predictor(covariates, treatment, coefficients),
            coefficients.target_outcome_inc,
        )
    return dataclasses.replace(coefficients, **updates)


def simulate(spec: ScenarioSpec, rng: np.random.Generator) -> SimDataset:
    """Generate one population; intercepts are calibrated on this population."""
    spec.validate()
    cov_rng, treat_rng, outcome_rng, nco_rng = rng.spawn(4)
    x = gen_covariates(spec, cov_rng)
    table = calibrate_table(x, None, spec.coefficients)
    a = gen_treatment(x, table, treat_rng)
    table = calibrate_table(x, a, table)
    y = gen_outcome(x, a, table, outcome_rng)
    yn = gen_nco(x, table, nco_rng)
    return SimDataset(
        covariates=x,
        names=tuple(table.names),
        treatment=a,
        outcome=y,
        nco=yn,
        true_ite=true_ite(x, table),
        u_column_index=table.u_index,
        coefficients=table,
    )


def interaction_columns(names: Sequence[str]) -> list[int]:
    return [names.index(t) for t in INTERACTION_TERMS if t in names]
