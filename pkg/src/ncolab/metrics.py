"""Evaluation of predicted individual effects on a held-out test set.

Every effect is a signed risk difference, treated minus untreated, so the
most negative predictions mark the largest expected benefit.
"""

from __future__ import annotations

import enum
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import RankDeficientError
from .glm.logistic import check_rank, fit_logistic

QUARTILES = ("Q1", "Q2", "Q3", "Q4")
NCO_RIDGE = 1e-6


class Estimator(str, enum.Enum):
    ORACLE = "Oracle"
    CAUSAL_FOREST = "CausalForest"
    X_LEARNER = "XLearner"


class Regime(str, enum.Enum):
    WITH_U = "WithU"
    WITHOUT_U = "WithoutU"


@dataclass(frozen=True)
class ItePredictions:
    values: np.ndarray
    estimator: Estimator
    confounding_regime: Regime

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("ITE predictions must be finite")


@dataclass(frozen=True)
class QuartileAssignment:
    labels: np.ndarray
    boundaries: tuple[float, float, float]
    degenerate: bool = False

    def members(self, q: int) -> np.ndarray:
        return np.flatnonzero(self.labels == q)


def _values(predictions) -> np.ndarray:
    v = predictions.values if isinstance(predictions, ItePredictions) else predictions
    return np.asarray(v, dtype=np.float64)


def assign_quartiles(predictions) -> QuartileAssignment:
    """Four contiguous groups of the stably sorted predictions; label 0 is Q1.

    Group ``k`` takes sorted positions ``[floor(k*n/4), floor((k+1)*n/4))``.
    """
    v = _values(predictions)
    n = v.shape[0]
    if n < 8:
        raise ValueError(f"need at least 8 predictions, got {n}")
    order = np.argsort(v, kind="stable")
    edges = [(k * n) // 4 for k in range(5)]
    labels = np.empty(n, dtype=np.int8)
    for k in range(4):
        labels[order[edges[k] : edges[k + 1]]] = k
    sorted_v = v[order]
    bounds = tuple(float(0.5 * (sorted_v[e - 1] + sorted_v[e])) for e in edges[1:4])
    return QuartileAssignment(labels=labels, boundaries=bounds, degenerate=bool(v.min() == v.max()))


def summarize_ate(predictions) -> float:
    v = _values(predictions)
    if v.size == 0:
        raise ValueError("no predictions")
    return float(v.mean())


def quartile_means(predictions, quartiles: QuartileAssignment) -> np.ndarray:
    v = _values(predictions)
    return np.array([v[quartiles.labels == k].mean() for k in range(4)])


def rmse_vs_oracle(predictions, oracle_predictions) -> float:
    v = _values(predictions)
    o = _values(oracle_predictions)
    if v.shape != o.shape:
        raise ValueError(f"length mismatch: {v.shape[0]} vs {o.shape[0]}")
    return float(np.sqrt(np.mean((v - o) ** 2)))


# ------------------------------------------------------------ c-for-benefit


def benefit_pairs(predictions, treatment, outcome):
    """Rank-matched treated/untreated pairs.

    Returns ``(rank, observed)`` where ``rank`` orders pairs by predicted
    benefit (larger is more benefit, equal within ties) and ``observed`` is
    ``Y_untreated - Y_treated``.

    Pair ``k`` joins the ``k``-th smallest prediction of each arm, so the
    pair-mean prediction is non-decreasing in ``k`` and two pairs tie
    exactly when both members tie.  Ranking by that structure rather than
    by the float mean keeps the order invariant to increasing transforms.
    """
    v = _values(predictions)
    a = np.asarray(treatment)
    y = np.asarray(outcome)
    t_idx = np.flatnonzero(a == 1)
    c_idx = np.flatnonzero(a == 0)
    t_idx = t_idx[np.argsort(v[t_idx], kind="stable")]
    c_idx = c_idx[np.argsort(v[c_idx], kind="stable")]
    m = min(t_idx.size, c_idx.size)
    t_idx, c_idx = t_idx[:m], c_idx[:m]
    vt, vc = v[t_idx], v[c_idx]
    new_block = np.ones(m, dtype=bool)
    new_block[1:] = (vt[1:] != vt[:-1]) | (vc[1:] != vc[:-1])
    block = np.cumsum(new_block) - 1
    rank = block.max() - block if m else block
    observed = y[c_idx].astype(np.int64) - y[t_idx].astype(np.int64)
    return rank, observed


def _concordance(rank: np.ndarray, observed: np.ndarray) -> tuple[float, int]:
    """Concordant plus half-tied count over pairs of pairs with unequal observed benefit."""
    levels = np.unique(observed)
    groups = {o: np.sort(rank[observed == o]) for o in levels}
    score = 0.0
    total = 0
    for i, hi in enumerate(levels):
        for lo in levels[:i]:
            r_hi, r_lo = groups[hi], groups[lo]
            below = np.searchsorted(r_lo, r_hi, side="left")
            at_or_below = np.searchsorted(r_lo, r_hi, side="right")
            score += below.sum() + 0.5 * (at_or_below - below).sum()
            total += r_hi.size * r_lo.size
    return score, total


def c_for_benefit(predictions, treatment, outcome) -> float:
    """Concordance between predicted and observed benefit over matched pairs.

    NaN when fewer than two pairs exist or no two pairs differ in observed
    benefit.
    """
    rank, observed = benefit_pairs(predictions, treatment, outcome)
    if rank.size < 2:
        return math.nan
    score, total = _concordance(rank, observed)
    return score / total if total else math.nan


def c_for_benefit_bruteforce(predictions, treatment, outcome) -> float:
    """Quadratic reference version comparing float pair means directly."""
    v = _values(predictions)
    a = np.asarray(treatment)
    y = np.asarray(outcome)
    t_idx = np.flatnonzero(a == 1)
    c_idx = np.flatnonzero(a == 0)
    t_idx = t_idx[np.argsort(v[t_idx], kind="stable")]
    c_idx = c_idx[np.argsort(v[c_idx], kind="stable")]
    m = min(t_idx.size, c_idx.size)
    benefit = -(v[t_idx[:m]] + v[c_idx[:m]]) / 2.0
    observed = y[c_idx[:m]].astype(int) - y[t_idx[:m]].astype(int)
    score = 0.0
    total = 0
    for i in range(m):
        for j in range(i + 1, m):
            if observed[i] == observed[j]:
                continue
            total += 1
            hi, lo = (i, j) if observed[i] > observed[j] else (j, i)
            if benefit[hi] > benefit[lo]:
                score += 1.0
            elif benefit[hi] == benefit[lo]:
                score += 0.5
    return score / total if total else math.nan


# ------------------------------------------------------------ NCO diagnostic


@dataclass(frozen=True)
class NcoSubgroupEffect:
    quartile: str
    effect: float
    adjusted_for_u: bool
    coefficient: float = math.nan
    ridge: bool = False
    dropped_columns: tuple[int, ...] = ()
    failed: bool = False


def _usable_columns(x: np.ndarray) -> list[int]:
    """Columns of ``x`` (column 0 is treatment) left after dropping constants and collinear terms."""
    cols = [j for j in range(x.shape[1]) if j == 0 or x[:, j].min() != x[:, j].max()]
    while True:
        try:
            check_rank(x[:, cols])
            return cols
        except RankDeficientError as err:
            if err.column > 0:
                del cols[err.column]
                continue
            # the pivot blamed the intercept or treatment: rebuild greedily,
            # keeping each covariate only if it adds rank
            kept = [0]
            for j in cols[1:]:
                try:
                    check_rank(x[:, kept + [j]])
                    kept.append(j)
                except RankDeficientError:
                    pass
            check_rank(x[:, kept])
            return kept


def nco_effect(x: np.ndarray, treatment: np.ndarray, nco: np.ndarray, adjusted_for_u: bool, label: str):
    """Standardized adjusted risk difference of treatment on the NCO within one subgroup."""
    a = np.asarray(treatment, dtype=np.float64)
    design = np.column_stack([a, x])
    try:
        cols = _usable_columns(design)
    except RankDeficientError:
        return NcoSubgroupEffect(label, math.nan, adjusted_for_u, failed=True)
    dropped = tuple(j - 1 for j in range(design.shape[1]) if j not in cols)
    d = design[:, cols]
    fit = fit_logistic(d, nco, check_collinearity=False)
    ridge = False
    if fit.separated or not fit.converged:
        fit = fit_logistic(d, nco, ridge=NCO_RIDGE, check_collinearity=False)
        ridge = True
    b = fit.coefficients
    eta_rest = b[0] + d[:, 1:] @ b[2:]
    effect = float(np.mean(expit(eta_rest + b[1]) - expit(eta_rest)))
    return NcoSubgroupEffect(
        quartile=label,
        effect=effect,
        adjusted_for_u=adjusted_for_u,
        coefficient=float(b[1]),
        ridge=ridge,
        dropped_columns=dropped,
        failed=not math.isfinite(effect),
    )


def nco_subgroup_effects(
    covariates: np.ndarray,
    treatment: np.ndarray,
    nco: np.ndarray,
    quartiles: QuartileAssignment,
    include_u: bool,
    u_column: int | None = None,
) -> list[NcoSubgroupEffect]:
    """Per-quartile NCO effect adjusted for the measured covariates (and U when asked).

    ``covariates`` holds every column; ``u_column`` names the unmeasured one
    and is dropped unless ``include_u``.
    """
    x = np.asarray(covariates, dtype=np.float64)
    if u_column is not None and not include_u:
        x = np.delete(x, u_column, axis=1)
    a = np.asarray(treatment)
    out = []
    for k, label in enumerate(QUARTILES):
        rows = quartiles.labels == k
        if a[rows].min() == a[rows].max():
            out.append(NcoSubgroupEffect(label, math.nan, include_u, failed=True))
            continue
        out.append(nco_effect(x[rows], a[rows], np.asarray(nco)[rows], include_u, label))
    return out


# ------------------------------------------------------------ results


@dataclass(frozen=True)
class ReplicationResult:
    scenario: str
    setting: str
    estimator: Estimator
    regime: Regime
    replication_index: int
    ate: float
    quartile_means: tuple[float, float, float, float]
    rmse_vs_oracle: float | None
    c_for_benefit: float
    nco_effects: tuple[NcoSubgroupEffect, ...]
    flags: tuple[str, ...] = ()
    failed: bool = False

    @property
    def cell(self) -> tuple[str, str, str, str]:
        return (self.scenario, self.setting, self.estimator.value, self.regime.value)


def evaluate(
    predictions: ItePredictions,
    oracle: np.ndarray | None,
    covariates: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    nco: np.ndarray,
    u_column: int,
    scenario: str,
    setting: str,
    replication_index: int,
) -> ReplicationResult:
    """All metrics for one estimator and regime on the test set."""
    v = predictions.values
    quart = assign_quartiles(v)
    include_u = predictions.confounding_regime is Regime.WITH_U
    nco_fx = nco_subgroup_effects(covariates, treatment, nco, quart, include_u, u_column)
    flags = []
    if quart.degenerate:
        flags.append("degenerate_quartiles")
    if any(e.ridge for e in nco_fx):
        flags.append("nco_ridge")
    if any(e.failed for e in nco_fx):
        flags.append("nco_failed")
    return ReplicationResult(
        scenario=scenario,
        setting=setting,
        estimator=predictions.estimator,
        regime=predictions.confounding_regime,
        replication_index=replication_index,
        ate=summarize_ate(v),
        quartile_means=tuple(float(q) for q in quartile_means(v, quart)),
        rmse_vs_oracle=None if oracle is None else rmse_vs_oracle(v, oracle),
        c_for_benefit=c_for_benefit(v, treatment, outcome),
        nco_effects=tuple(nco_fx),
        flags=tuple(flags),
    )


@dataclass(frozen=True)
class Interval:
    median: float
    lo: float
    hi: float


def percentile_interval(values) -> Interval:
    v = np.asarray([x for x in values if x is not None and math.isfinite(x)], dtype=np.float64)
    if v.size == 0:
        return Interval(math.nan, math.nan, math.nan)
    lo, med, hi = np.percentile(v, [2.5, 50.0, 97.5])
    return Interval(float(med), float(lo), float(hi))


@dataclass(frozen=True)
class CellSummary:
    scenario: str
    setting: str
    estimator: str
    regime: str
    replications: int
    failures: int
    ate: Interval
    rmse: Interval
    c_for_benefit: Interval
    quartile_means: tuple[float, float, float, float]
    nco: tuple[Interval, Interval, Interval, Interval]
    nco_coefficient: tuple[Interval, Interval, Interval, Interval]


@dataclass(frozen=True)
class StudySummary:
    cells: dict[tuple[str, str, str, str], CellSummary]
    missing: tuple[tuple[str, str, str, str], ...] = ()
    reps_by_cell: dict[tuple[str, str, str, str], int] = field(default_factory=dict)

    def __getitem__(self, key) -> CellSummary:
        return self.cells[tuple(getattr(k, "value", k) for k in key)]


def expected_cells(scenario: str, setting: str) -> list[tuple[str, str, str, str]]:
    cells = [(scenario, setting, Estimator.ORACLE.value, Regime.WITH_U.value)]
    for est in (Estimator.CAUSAL_FOREST, Estimator.X_LEARNER):
        for reg in Regime:
            cells.append((scenario, setting, est.value, reg.value))
    return cells


def summarize_study(results: list[ReplicationResult]) -> StudySummary:
    """Median and 2.5/97.5 percentiles per scenario, setting, estimator and regime.

    Cells expected for a scenario and setting but absent (or failed in every
    replication) are listed in ``missing``.
    """
    grouped: dict[tuple, list[ReplicationResult]] = defaultdict(list)
    designs = set()
    for r in results:
        grouped[r.cell].append(r)
        designs.add((r.scenario, r.setting))
    cells = {}
    for key, rs in grouped.items():
        ok = [r for r in rs if not r.failed]
        if len(ok) < 2:
            continue
        q = np.array([r.quartile_means for r in ok])
        cells[key] = CellSummary(
            *key,
            replications=len(rs),
            failures=len(rs) - len(ok),
            ate=percentile_interval(r.ate for r in ok),
            rmse=percentile_interval(r.rmse_vs_oracle for r in ok),
            c_for_benefit=percentile_interval(r.c_for_benefit for r in ok),
            quartile_means=tuple(float(m) for m in q.mean(axis=0)),
            nco=tuple(percentile_interval(r.nco_effects[k].effect for r in ok) for k in range(4)),
            nco_coefficient=tuple(
                percentile_interval(r.nco_effects[k].coefficient for r in ok) for k in range(4)
            ),
        )
    missing = sorted(
        {c for d in designs for c in expected_cells(*d)} - set(cells)
    )
    return StudySummary(
        cells=cells,
        missing=tuple(missing),
        reps_by_cell={k: len(v) for k, v in grouped.items()},
    )
