"""Replication loop, study orchestration and result files.

One replication simulates a population, splits it 75/25, fits the oracle
once (with U) and both learners twice (with and without U) on the training
part, then scores every model on the test part.  All randomness comes from
``derive_stream`` keyed by the spec id, replication index and model label,
so results do not depend on scheduling or worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from . import __version__
from . import causal_forest as cf
from . import xlearner as xl
from .errors import ConfigError
from .glm.logistic import fit_logistic
from .metrics import (
    QUARTILES,
    Estimator,
    ItePredictions,
    NcoSubgroupEffect,
    Regime,
    ReplicationResult,
    StudySummary,
    evaluate,
    summarize_study,
)
from .scenarios import spec_digest, spec_to_dict
from .seeding import derive_stream
from .simgen import INTERACTION_TERMS, ScenarioSpec, SimDataset, simulate

log = logging.getLogger(__name__)

# Covariates that enter the treatment and NCO models but never the outcome model.
OUTCOME_EXCLUDED = ("C14", "C15", "C16")


@dataclass(frozen=True)
class ModelSettings:
    """Estimator budget; the defaults are the full-scale configuration."""

    cf_trees: int = 4000
    tuning_draws: int = cf.TUNING_DRAWS
    pilot_trees: int = cf.PILOT_TREES
    lasso_folds: int = 10
    oracle_plugin: bool = False

    def validate(self) -> None:
        if self.cf_trees < 1 or self.pilot_trees < 1:
            raise ConfigError("tree counts must be positive")
        if self.tuning_draws < 1:
            raise ConfigError("tuning_draws must be positive")


# "desk" keeps the forest at 1000 trees and trims the tuning search so a
# 100-replication study fits on one workstation core.
PROFILES = {
    "full": ModelSettings(),
    "desk": ModelSettings(cf_trees=1000, tuning_draws=20, pilot_trees=100),
}


@dataclass(frozen=True)
class RunPlan:
    specs: tuple[ScenarioSpec, ...]
    replications: int = 500
    train_fraction: float = 0.75
    output_dir: Path | None = None
    threads: int = 1
    master_seed: int | None = None
    models: ModelSettings = field(default_factory=ModelSettings)
    first_rep: int = 0

    def validate(self) -> None:
        if not 0.5 < self.train_fraction < 0.9:
            raise ConfigError("train_fraction must lie in (0.5, 0.9)")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        if self.first_rep < 0:
            raise ConfigError("first_rep must be non-negative")
        self.models.validate()
        for spec in self.specs:
            spec.validate()

    @property
    def rep_indices(self) -> range:
        return range(self.first_rep, self.first_rep + self.replications)

    def seed_for(self, spec: ScenarioSpec) -> int:
        return spec.master_seed if self.master_seed is None else self.master_seed


# ------------------------------------------------------------ oracle


@dataclass(frozen=True)
class OracleSpec:
    """Term set of the outcome model: intercept, A, covariates, A x interactions."""

    covariates: tuple[str, ...]
    interactions: tuple[str, ...] = INTERACTION_TERMS

    @classmethod
    def for_names(cls, names) -> OracleSpec:
        return cls(covariates=tuple(n for n in names if n not in OUTCOME_EXCLUDED))

    def design(self, data: SimDataset, treatment: np.ndarray) -> np.ndarray:
        idx = [data.names.index(n) for n in self.covariates]
        x = data.covariates[:, idx]
        a = np.asarray(treatment, dtype=np.float64)
        inter = [a * data.covariates[:, data.names.index(n)] for n in self.interactions]
        return np.column_stack([a, x, *inter])

    def true_coefficients(self, data: SimDataset) -> np.ndarray:
        t = data.coefficients
        return np.array(
            [t.outcome_intercept, t.treatment_effect]
            + [t.outcome_coefs[n] for n in self.covariates]
            + [t.interaction_coefs.get(n, 0.0) for n in self.interactions],
            dtype=np.float64,
        )


def fit_oracle(train: SimDataset, spec: OracleSpec, plugin: bool = False) -> np.ndarray:
    if plugin:
        return spec.true_coefficients(train)
    fit = fit_logistic(spec.design(train, train.treatment), train.outcome.astype(np.float64))
    if not fit.converged:
        raise RuntimeError("oracle logistic fit did not converge")
    return fit.coefficients


def oracle_ite(coefs: np.ndarray, data: SimDataset, spec: OracleSpec) -> np.ndarray:
    ones = np.ones(data.n)
    eta1 = coefs[0] + spec.design(data, ones) @ coefs[1:]
    eta0 = coefs[0] + spec.design(data, 0.0 * ones) @ coefs[1:]
    return expit(eta1) - expit(eta0)


# ------------------------------------------------------------ replication


def split_rows(n: int, train_fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def covariate_view(data: SimDataset, regime: Regime) -> np.ndarray:
    if regime is Regime.WITH_U:
        return data.covariates
    return data.covariates[:, data.measured_columns()]


def fit_causal_forest(x, treatment, outcome, models: ModelSettings, rng):
    center_rng, tune_rng, fit_rng = rng.spawn(3)
    res = cf.center_locally(x, treatment, outcome, center_rng)
    tuned = cf.tune(
        x, treatment, res, tune_rng,
        draws=models.tuning_draws, pilot_trees=models.pilot_trees, num_trees=models.cf_trees,
    )
    return cf.fit(x, treatment, outcome, tuned.params, fit_rng, residuals=res)


def _failed(spec, est, regime, rep, reason) -> ReplicationResult:
    nan_fx = tuple(NcoSubgroupEffect(q, math.nan, regime is Regime.WITH_U, failed=True) for q in QUARTILES)
    return ReplicationResult(
        scenario=spec.scenario.value,
        setting=spec.setting.value,
        estimator=est,
        regime=regime,
        replication_index=rep,
        ate=math.nan,
        quartile_means=(math.nan,) * 4,
        rmse_vs_oracle=None,
        c_for_benefit=math.nan,
        nco_effects=nan_fx,
        flags=(f"failed:{reason}",),
        failed=True,
    )


def run_replication(
    spec: ScenarioSpec,
    rep_index: int,
    models: ModelSettings | None = None,
    train_fraction: float = 0.75,
    master_seed: int | None = None,
) -> list[ReplicationResult]:
    """Five results: the oracle, then causal forest and X-learner in each regime."""
    models = models or ModelSettings()
    seed = spec.master_seed if master_seed is None else master_seed
    sid = spec.spec_id
    data = simulate(spec, derive_stream(seed, sid, rep_index, "data"))
    train_rows, test_rows = split_rows(data.n, train_fraction, derive_stream(seed, sid, rep_index, "split"))
    train, test = data.subset(train_rows), data.subset(test_rows)

    def score(values, est, regime, oracle):
        return evaluate(
            ItePredictions(values, est, regime), oracle,
            test.covariates, test.treatment, test.outcome, test.nco, test.u_column_index,
            spec.scenario.value, spec.setting.value, rep_index,
        )

    results = []
    ospec = OracleSpec.for_names(data.names)
    try:
        coefs = fit_oracle(train, ospec, models.oracle_plugin)
        oracle = oracle_ite(coefs, test, ospec)
        results.append(score(oracle, Estimator.ORACLE, Regime.WITH_U, None))
    except Exception as err:  # noqa: BLE001 - any fit failure is recorded, not raised
        log.warning("%s rep %d oracle failed: %s", sid, rep_index, err)
        oracle = None
        results.append(_failed(spec, Estimator.ORACLE, Regime.WITH_U, rep_index, type(err).__name__))

    learners = (
        (Estimator.CAUSAL_FOREST, "cf", lambda x, r: cf.predict_cate(
            fit_causal_forest(x, train.treatment, train.outcome, models, r), covariate_view(test, regime))),
        (Estimator.X_LEARNER, "xl", lambda x, r: xl.predict_cate(
            xl.fit(x, train.treatment, train.outcome, r, models.lasso_folds), covariate_view(test, regime))),
    )
    for est, label, run in learners:
        for regime in Regime:
            rng = derive_stream(seed, sid, rep_index, label, regime.value)
            try:
                values = run(covariate_view(train, regime), rng)
                results.append(score(values, est, regime, oracle))
            except Exception as err:  # noqa: BLE001
                log.warning("%s rep %d %s/%s failed: %s", sid, rep_index, est.value, regime.value, err)
                results.append(_failed(spec, est, regime, rep_index, type(err).__name__))
    return results


def _run_cell(args) -> list[ReplicationResult]:
    spec, rep, models, train_fraction, seed = args
    t0 = time.perf_counter()
    out = run_replication(spec, rep, models, train_fraction, seed)
    log.info("%s rep %d done in %.1fs", spec.spec_id, rep, time.perf_counter() - t0)
    return out


def run_plan(plan: RunPlan) -> StudySummary:
    """Run every spec x replication cell, then write result files if ``output_dir`` is set."""
    plan.validate()
    work = [
        (spec, rep, plan.models, plan.train_fraction, plan.seed_for(spec))
        for spec in plan.specs
        for rep in plan.rep_indices
    ]
    if plan.threads == 1:
        chunks = [_run_cell(w) for w in work]
    else:
        with ProcessPoolExecutor(max_workers=plan.threads) as pool:
            chunks = list(pool.map(_run_cell, work))
    results = [r for chunk in chunks for r in chunk]
    summary = summarize_study(results)
    if plan.output_dir is not None:
        write_outputs(Path(plan.output_dir), plan, results, summary)
    return summary


# ------------------------------------------------------------ files

REPLICATION_COLUMNS = (
    ["scenario", "setting", "estimator", "regime", "rep", "ate", "q1", "q2", "q3", "q4", "rmse", "cfb"]
    + [f"nco_q{k}" for k in range(1, 5)]
    + [f"nco_coef_q{k}" for k in range(1, 5)]
    + ["flags"]
)
SUMMARY_COLUMNS = [
    "scenario", "setting", "estimator", "regime", "replications", "failures",
    "ate_median", "ate_lo", "ate_hi", "q1", "q2", "q3", "q4",
    "rmse_median", "rmse_lo", "rmse_hi", "cfb_median", "cfb_lo", "cfb_hi",
]
NCO_PLOT_COLUMNS = [
    "scenario", "setting", "estimator", "regime", "quartile",
    "median", "lo", "hi", "coef_median", "coef_lo", "coef_hi",
]


def _num(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def _parse_num(s: str) -> float | None:
    return None if s == "" else float(s)


def replication_row(r: ReplicationResult) -> list[str]:
    return (
        [r.scenario, r.setting, r.estimator.value, r.regime.value, str(r.replication_index),
         _num(r.ate), *map(_num, r.quartile_means), _num(r.rmse_vs_oracle), _num(r.c_for_benefit)]
        + [_num(e.effect) for e in r.nco_effects]
        + [_num(e.coefficient) for e in r.nco_effects]
        + [";".join(r.flags)]
    )


def read_replications(path: Path) -> list[ReplicationResult]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            regime = Regime(row["regime"])
            flags = tuple(f for f in row["flags"].split(";") if f)
            effects = tuple(
                NcoSubgroupEffect(
                    quartile=q,
                    effect=float(row[f"nco_q{k + 1}"]),
                    adjusted_for_u=regime is Regime.WITH_U,
                    coefficient=float(row[f"nco_coef_q{k + 1}"]),
                    ridge="nco_ridge" in flags,
                )
                for k, q in enumerate(QUARTILES)
            )
            out.append(
                ReplicationResult(
                    scenario=row["scenario"],
                    setting=row["setting"],
                    estimator=Estimator(row["estimator"]),
                    regime=regime,
                    replication_index=int(row["rep"]),
                    ate=float(row["ate"]),
                    quartile_means=tuple(float(row[f"q{k}"]) for k in range(1, 5)),
                    rmse_vs_oracle=_parse_num(row["rmse"]),
                    c_for_benefit=float(row["cfb"]),
                    nco_effects=effects,
                    flags=flags,
                    failed=any(f.startswith("failed") for f in flags),
                )
            )
    return out


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_summary(out: Path, summary: StudySummary) -> None:
    rows, plot = [], []
    for key in sorted(summary.cells):
        c = summary.cells[key]
        rows.append(
            [*key, str(c.replications), str(c.failures),
             _num(c.ate.median), _num(c.ate.lo), _num(c.ate.hi), *map(_num, c.quartile_means),
             _num(c.rmse.median), _num(c.rmse.lo), _num(c.rmse.hi),
             _num(c.c_for_benefit.median), _num(c.c_for_benefit.lo), _num(c.c_for_benefit.hi)]
        )
        for q, eff, coef in zip(QUARTILES, c.nco, c.nco_coefficient):
            plot.append([*key, q, _num(eff.median), _num(eff.lo), _num(eff.hi),
                         _num(coef.median), _num(coef.lo), _num(coef.hi)])
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, rows)
    _write_csv(out / "nco_plot.csv", NCO_PLOT_COLUMNS, plot)


def plan_digest(plan: RunPlan) -> str:
    payload = {
        "specs": [spec_digest(s) for s in plan.specs],
        "replications": plan.replications,
        "first_rep": plan.first_rep,
        "train_fraction": plan.train_fraction,
        "master_seed": [plan.seed_for(s) for s in plan.specs],
        "models": dataclasses.asdict(plan.models),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def manifest(plan: RunPlan, results: list[ReplicationResult], summary: StudySummary) -> dict:
    failures: dict[str, int] = {}
    for r in results:
        if r.failed:
            key = "/".join(r.cell)
            failures[key] = failures.get(key, 0) + 1
    return {
        "tool": "ncolab",
        "version": __version__,
        "config_digest": plan_digest(plan),
        "master_seed": [plan.seed_for(s) for s in plan.specs],
        "replications": plan.replications,
        "first_rep": plan.first_rep,
        "spec_digests": [spec_digest(s) for s in plan.specs],
        "train_fraction": plan.train_fraction,
        "models": dataclasses.asdict(plan.models),
        "specs": [spec_to_dict(s) for s in plan.specs],
        "failure_counts": failures,
        "missing_cells": ["/".join(c) for c in summary.missing],
    }


def write_outputs(out: Path, plan: RunPlan, results, summary: StudySummary) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "replications.csv", REPLICATION_COLUMNS, [replication_row(r) for r in results])
    write_summary(out, summary)
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest(plan, results, summary), fh, indent=2, sort_keys=True)
        fh.write("\n")


def summarize_dir(path: Path) -> StudySummary:
    """Recompute summary files from an existing ``replications.csv``."""
    path = Path(path)
    summary = summarize_study(read_replications(path / "replications.csv"))
    write_summary(path, summary)
    return summary
