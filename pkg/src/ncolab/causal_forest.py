"""Honest causal forest with local centering by nuisance regression forests.

Outcome and treatment are residualized on out-of-bag forest predictions of
``E[Y|X]`` and ``P(A=1|X)``.  Each tree draws a subsample, grows its splits
on one part (the build half) and computes leaf effects on the other (the
estimation half) as the residual-on-residual ratio ``sum(a*y) / sum(a*a)``.
Predictions average the leaf effects over trees.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .glm._trees import (
    BinMapper,
    accumulate_tree,
    flatten_trees,
    grow_causal_tree,
    leaf_index,
    predict_forest,
    subsample,
)
from .glm.forest import ForestParams, RegressionForestFit, fit_regression_forest

log = logging.getLogger(__name__)

CLAMP = (1e-3, 1.0 - 1e-3)
MIN_PER_ARM_LEAF = 5


@dataclass(frozen=True)
class CausalForestParams:
    num_trees: int = 4000
    min_per_arm_leaf: int = MIN_PER_ARM_LEAF
    sample_fraction: float = 0.5
    honesty_fraction: float = 0.5
    mtry: int | None = None
    min_node_size: int = 5
    honesty_prune: bool = True
    alpha_child_fraction: float = 0.05
    imbalance_penalty: float = 0.0
    max_bins: int = 64

    def validate(self) -> None:
        if self.min_per_arm_leaf < MIN_PER_ARM_LEAF:
            raise ValueError(f"min_per_arm_leaf must be at least {MIN_PER_ARM_LEAF}")
        if self.num_trees < 1:
            raise ValueError("num_trees must be positive")
        if not 0.0 < self.sample_fraction <= 0.5:
            raise ValueError("sample_fraction must lie in (0, 0.5]")
        if not 0.1 < self.honesty_fraction < 0.9:
            raise ValueError("honesty_fraction must lie in (0.1, 0.9)")
        if not 0.0 < self.alpha_child_fraction <= 0.25:
            raise ValueError("alpha_child_fraction must lie in (0, 0.25]")
        if self.imbalance_penalty < 0:
            raise ValueError("imbalance_penalty must be non-negative")
        if self.mtry is not None and self.mtry < 1:
            raise ValueError("mtry must be positive")


@dataclass(frozen=True)
class Residuals:
    outcome: np.ndarray
    treatment: np.ndarray
    outcome_nuisance: RegressionForestFit | None = None
    propensity_nuisance: RegressionForestFit | None = None
    clamped: int = 0


@dataclass
class CausalForestFit:
    trees: dict[str, np.ndarray]
    params: CausalForestParams
    binner: BinMapper = field(repr=False)
    oob_predictions: np.ndarray = field(repr=False)
    oob_error: float = math.nan
    degenerate_trees: int = 0
    propensity_nuisance: RegressionForestFit | None = field(default=None, repr=False)
    outcome_nuisance: RegressionForestFit | None = field(default=None, repr=False)
    samples: list[tuple[np.ndarray, np.ndarray]] | None = field(default=None, repr=False)

    def predict_cate(self, x: np.ndarray) -> np.ndarray:
        return predict_cate(self, x)


def center_locally(
    x: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    rng: np.random.Generator,
    nuisance_params: ForestParams | None = None,
) -> Residuals:
    """Residualize ``Y`` and ``A`` on out-of-bag regression-forest predictions."""
    params = nuisance_params or ForestParams()
    y_rng, a_rng = rng.spawn(2)
    m_fit = fit_regression_forest(x, outcome, params, y_rng)
    e_fit = fit_regression_forest(x, treatment, params, a_rng)
    m_hat = m_fit.oob_predictions
    e_hat = e_fit.oob_predictions
    lo, hi = CLAMP
    clamped = int(np.sum((m_hat < lo) | (m_hat > hi)) + np.sum((e_hat < lo) | (e_hat > hi)))
    if clamped:
        log.debug("clamped %d nuisance predictions to %s", clamped, CLAMP)
    m_hat = np.clip(m_hat, lo, hi)
    e_hat = np.clip(e_hat, lo, hi)
    return Residuals(
        outcome=np.asarray(outcome, dtype=np.float64) - m_hat,
        treatment=np.asarray(treatment, dtype=np.float64) - e_hat,
        outcome_nuisance=m_fit,
        propensity_nuisance=e_fit,
        clamped=clamped,
    )


def _grow_forest(codes, nbins, arm, res: Residuals, params: CausalForestParams, rng, keep_samples):
    n, p = codes.shape
    mtry = min(params.mtry or p, p)
    size = max(2, int(round(params.sample_fraction * n)))
    n_build = max(1, int(round(params.honesty_fraction * size)))
    seeds = rng.integers(0, 2**32, size=(params.num_trees, 2), dtype=np.uint64)
    sums = np.zeros(n)
    counts = np.zeros(n)
    trees = []
    samples = [] if keep_samples else None
    degenerate = 0
    for sample_seed, grow_seed in seeds:
        rows, oob = subsample(n, size, int(sample_seed))
        build, est = rows[:n_build], rows[n_build:]
        tree = grow_causal_tree(
            codes,
            nbins,
            res.outcome,
            res.treatment,
            arm,
            build,
            est,
            mtry,
            params.min_node_size,
            params.min_per_arm_leaf,
            params.alpha_child_fraction,
            params.imbalance_penalty,
            params.honesty_prune,
            int(grow_seed),
        )
        node_arrays = tree[:5]
        if tree[2][0] < 0:
            degenerate += 1
        accumulate_tree(codes, oob, 0, *node_arrays, sums, counts)
        trees.append(tree)
        if samples is not None:
            samples.append((build, est))
    with np.errstate(invalid="ignore", divide="ignore"):
        oob_pred = sums / counts
    return trees, oob_pred, degenerate, samples


def oob_error(oob_pred: np.ndarray, res: Residuals) -> float:
    """Mean squared residual ``(Y_res - tau_oob * A_res)^2`` over rows with an OOB estimate."""
    ok = ~np.isnan(oob_pred)
    err = res.outcome[ok] - oob_pred[ok] * res.treatment[ok]
    return float(np.mean(err**2))


def fit(
    x: np.ndarray,
    treatment: np.ndarray,
    outcome: np.ndarray,
    params: CausalForestParams | None = None,
    rng: np.random.Generator | None = None,
    residuals: Residuals | None = None,
    keep_samples: bool = False,
) -> CausalForestFit:
    params = params or CausalForestParams()
    params.validate()
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(x, dtype=np.float64)
    arm = np.asarray(treatment).astype(np.int8)
    if residuals is None:
        residuals = center_locally(x, treatment, outcome, rng.spawn(1)[0])
    binner = BinMapper(params.max_bins).fit(x)
    codes = binner.transform(x)
    trees, oob_pred, degenerate, samples = _grow_forest(
        codes, binner.nbins_, arm, residuals, params, rng, keep_samples
    )
    if degenerate:
        log.debug("%d of %d causal trees are root-only", degenerate, params.num_trees)
    flat = flatten_trees([t[:5] for t in trees])
    flat["est_treated"] = np.concatenate([t[5] for t in trees])
    flat["est_control"] = np.concatenate([t[6] for t in trees])
    return CausalForestFit(
        trees=flat,
        params=params,
        binner=binner,
        oob_predictions=oob_pred,
        oob_error=oob_error(oob_pred, residuals),
        degenerate_trees=degenerate,
        propensity_nuisance=residuals.propensity_nuisance,
        outcome_nuisance=residuals.outcome_nuisance,
        samples=samples,
    )


def predict_cate(fit: CausalForestFit, x: np.ndarray) -> np.ndarray:
    """Average over trees of the honest leaf effect; risk-difference scale."""
    t = fit.trees
    codes = fit.binner.transform(x)
    return predict_forest(
        codes, t["roots"], t["feature"], t["thresh"], t["left"], t["right"], t["value"]
    )


def retained_leaves(fit: CausalForestFit) -> np.ndarray:
    """Global node ids of leaves reachable from some root."""
    t = fit.trees
    stack = list(t["roots"])
    leaves = []
    while stack:
        node = stack.pop()
        if t["left"][node] < 0:
            leaves.append(node)
        else:
            stack.extend((t["left"][node], t["right"][node]))
    return np.array(leaves, dtype=np.int64)


def leaf_membership(fit: CausalForestFit, x: np.ndarray, tree: int) -> np.ndarray:
    """Leaf node id reached by each row in tree ``tree``."""
    t = fit.trees
    codes = fit.binner.transform(x)
    root = int(t["roots"][tree])
    return np.array(
        [leaf_index(codes, i, root, t["feature"], t["thresh"], t["left"], t["right"]) for i in range(codes.shape[0])]
    )


# ------------------------------------------------------------------ tuning

TUNING_DRAWS = 50
PILOT_TREES = 200


def default_params(p: int, num_trees: int = 4000) -> CausalForestParams:
    return CausalForestParams(num_trees=num_trees, mtry=min(math.ceil(math.sqrt(p) + 20), p))


def draw_candidate(rng: np.random.Generator, p: int, num_trees: int) -> CausalForestParams:
    return CausalForestParams(
        num_trees=num_trees,
        sample_fraction=float(rng.uniform(0.15, 0.5)),
        honesty_fraction=float(rng.uniform(0.5, 0.8)),
        mtry=int(rng.integers(2, p + 1)),
        min_node_size=int(rng.integers(5, 51)),
        alpha_child_fraction=float(rng.uniform(0.05, 0.25)),
        imbalance_penalty=float(rng.uniform(0.0, 2.0)),
        honesty_prune=bool(rng.integers(0, 2)),
    )


@dataclass(frozen=True)
class TuningResult:
    params: CausalForestParams
    errors: tuple[float, ...]
    candidates: tuple[CausalForestParams, ...]


def evaluate_candidate(
    x: np.ndarray,
    treatment: np.ndarray,
    residuals: Residuals,
    params: CausalForestParams,
    seed: int,
) -> float:
    """OOB error of a pilot forest grown from a fixed seed."""
    params.validate()
    binner = BinMapper(params.max_bins).fit(x)
    codes = binner.transform(x)
    arm = np.asarray(treatment).astype(np.int8)
    _, oob_pred, _, _ = _grow_forest(
        codes, binner.nbins_, arm, residuals, params, np.random.default_rng(seed), False
    )
    return oob_error(oob_pred, residuals)


def tune(
    x: np.ndarray,
    treatment: np.ndarray,
    residuals: Residuals,
    rng: np.random.Generator,
    draws: int = TUNING_DRAWS,
    pilot_trees: int = PILOT_TREES,
    num_trees: int = 4000,
    candidates: list[CausalForestParams] | None = None,
) -> TuningResult:
    """Random search over the forest tunables by pilot-forest OOB error.

    The first candidate is the default configuration.  Every pilot forest
    uses the same seed, so candidates are compared on common random numbers.
    """
    p = x.shape[1]
    if candidates is None:
        candidates = [default_params(p, pilot_trees)]
        candidates += [draw_candidate(rng, p, pilot_trees) for _ in range(draws - 1)]
    else:
        candidates = [dataclasses.replace(c, num_trees=pilot_trees) for c in candidates]
    pilot_seed = int(rng.integers(0, 2**63 - 1))
    errors = [evaluate_candidate(x, treatment, residuals, c, pilot_seed) for c in candidates]
    best = int(np.argmin(errors))
    chosen = dataclasses.replace(candidates[best], num_trees=num_trees)
    return TuningResult(params=chosen, errors=tuple(errors), candidates=tuple(candidates))
