"""Subsampled CART regression forest with out-of-bag predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._trees import (
    BinMapper,
    accumulate_tree,
    flatten_trees,
    grow_regression_tree,
    predict_forest,
    subsample,
)


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = 500
    mtry: int | None = None
    min_leaf: int = 5
    sample_fraction: float = 0.5
    max_bins: int = 64


@dataclass
class RegressionForestFit:
    trees: dict[str, np.ndarray]
    num_trees: int
    mtry: int
    min_leaf: int
    oob_predictions: np.ndarray
    binner: BinMapper = field(repr=False)
    samples: list[np.ndarray] | None = field(default=None, repr=False)

    def predict(self, x: np.ndarray) -> np.ndarray:
        t = self.trees
        codes = self.binner.transform(x)
        return predict_forest(
            codes, t["roots"], t["feature"], t["thresh"], t["left"], t["right"], t["value"]
        )


def _tree_seeds(rng: np.random.Generator, num_trees: int) -> np.ndarray:
    return rng.integers(0, 2**32, size=(num_trees, 2), dtype=np.uint64)


def fit_regression_forest(
    design: np.ndarray,
    response: np.ndarray,
    params: ForestParams | None = None,
    rng: np.random.Generator | None = None,
    keep_samples: bool = False,
) -> RegressionForestFit:
    """Fit the forest; ``oob_predictions[i]`` averages trees whose subsample excludes row i.

    Rows that land in every subsample (vanishingly rare at default settings)
    get the full-forest prediction instead.
    """
    params = params or ForestParams()
    rng = rng if rng is not None else np.random.default_rng()
    x = np.asarray(design, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    n, p = x.shape
    if n < 50:
        raise ValueError(f"regression forest needs at least 50 rows, got {n}")
    if y.shape != (n,):
        raise ValueError("response length does not match design")
    mtry = params.mtry or math.ceil(p / 3)
    mtry = min(max(mtry, 1), p)
    size = max(1, int(round(params.sample_fraction * n)))

    binner = BinMapper(params.max_bins).fit(x)
    codes = binner.transform(x)
    nbins = binner.nbins_
    sums = np.zeros(n)
    counts = np.zeros(n)
    trees = []
    samples = [] if keep_samples else None
    for sample_seed, grow_seed in _tree_seeds(rng, params.num_trees):
        rows, oob = subsample(n, size, int(sample_seed))
        tree = grow_regression_tree(codes, nbins, y, rows, mtry, params.min_leaf, int(grow_seed))
        accumulate_tree(codes, oob, 0, *tree, sums, counts)
        trees.append(tree)
        if samples is not None:
            samples.append(rows)
    flat = flatten_trees(trees)
    with np.errstate(invalid="ignore", divide="ignore"):
        oob_pred = sums / counts
    missing = counts == 0
    if missing.any():
        full = predict_forest(
            codes[missing], flat["roots"], flat["feature"], flat["thresh"], flat["left"],
            flat["right"], flat["value"],
        )
        oob_pred[missing] = full
    return RegressionForestFit(
        trees=flat,
        num_trees=params.num_trees,
        mtry=mtry,
        min_leaf=params.min_leaf,
        oob_predictions=oob_pred,
        binner=binner,
        samples=samples,
    )
