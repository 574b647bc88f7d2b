"""Bagged ensembles of correlation-adjusted trees.

Three variants share the same tree engine:

* fixed -- every tree is grown at a caller-supplied delta;
* PL    -- delta is chosen by maximizing a profile pseudo-log-likelihood of
           the out-of-bag residuals under the low-rank correlation, and a
           single global ridge/BLUP spatial effect is added at prediction;
* NP    -- delta is chosen by minimizing out-of-bag mean squared error of
           tree-plus-per-tree-spatial-effect predictions.

Tree RNG streams derive from (forest seed, delta index, tree index), so
serial and parallel fits agree bit for bit.
"""

from __future__ import annotations

import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import LocatedDataset
from .geometry import (LowRankCorrelation, SpatialBasis, build_basis,
                       default_knot_count, evaluate_basis_at,
                       low_rank_inverse_apply, low_rank_log_det, select_knots)
from .tree import SpatialTree, TreeParams, fit_tree, predict_tree, tree_blup

KAPPA_FLOOR = 1e-12


def default_delta_grid() -> np.ndarray:
    """0.00, 0.05, ..., 0.95; delta = 1 is excluded (rank-deficient limit)."""
    return np.round(np.arange(20) * 0.05, 2)


def worker_count() -> int:
    """Workers from SPATRF_THREADS: unset/1 = serial, 0 = all cores."""
    raw = os.environ.get("SPATRF_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"SPATRF_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValueError("SPATRF_THREADS must be nonnegative")
    return (os.cpu_count() or 1) if n == 0 else n


@dataclass
class ForestParams:
    n_trees: int = 200
    tree_params: TreeParams = field(default_factory=TreeParams)
    delta_grid: np.ndarray | None = None     # None = default_delta_grid()
    seed: int = 0
    shared_knots: bool = False

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be at least 1")
        if self.delta_grid is not None:
            g = np.asarray(self.delta_grid, dtype=float)
            if g.ndim != 1 or g.size == 0:
                raise ValueError("delta_grid must be a nonempty 1-D sequence")
            if np.any(np.diff(g) <= 0):
                raise ValueError("delta_grid must be strictly increasing")
            if g[0] < 0 or g[-1] > 0.95:
                raise ValueError("delta_grid values must lie in [0, 0.95]")
            self.delta_grid = g

    def resolve_grid(self) -> np.ndarray:
        return default_delta_grid() if self.delta_grid is None else self.delta_grid


@dataclass
class DeltaProfile:
    """Criterion trace over the delta grid; ties break toward smaller delta."""

    grid: np.ndarray
    criterion_values: np.ndarray
    argbest: int

    @property
    def delta_selected(self) -> float:
        return float(self.grid[self.argbest])


@dataclass
class SpatialForest:
    trees: list[SpatialTree]
    bags: list[np.ndarray]
    delta_selected: float
    variant: str = "fixed"                    # fixed | PL | NP
    global_eta: np.ndarray | None = None      # PL only
    global_basis: SpatialBasis | None = None  # PL only
    kappa_hat: float | None = None            # PL only
    covariate_basis: SpatialBasis | None = None  # basis-as-covariates forests
    n_train: int = 0

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def predict(self, X_new, locations_new=None) -> np.ndarray:
        return predict_forest(self, X_new, locations_new)


def _fit_tree_task(args):
    data, delta, params_tuple, seed_key, basis = args
    params = TreeParams(*params_tuple)
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    bag = rng.integers(0, data.n, size=data.n)
    tree = fit_tree(data, bag, delta, params, rng=rng, basis=basis)
    return tree, bag


def _params_tuple(tp: TreeParams) -> tuple:
    return (tp.mtry, tp.min_node_size, tp.max_splits, tp.dtol, tp.seed,
            tp.n_knots, tp.basis_kind, tp.basis_scale)


def fit_fixed_delta(data: LocatedDataset, delta: float, params: ForestParams,
                    delta_index: int = 0) -> SpatialForest:
    """Fit B trees on bootstrap bags at a fixed delta."""
    if data.Z is None:
        raise ValueError("training data must carry a response")
    if data.n < 2:
        raise ValueError("need at least two observations to fit a forest")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")

    shared_basis = None
    if params.shared_knots and delta > 0.0:
        tp = params.tree_params
        n_distinct = len(np.unique(data.coords, axis=0))
        k = min(tp.n_knots or default_knot_count(data.n), n_distinct)
        knots = select_knots(data.coords, k, seed=params.seed)
        shared_basis, _ = build_basis(data.coords, knots, tp.basis_kind, tp.basis_scale)

    tasks = [
        (data, delta, _params_tuple(params.tree_params),
         (params.seed, delta_index, t), shared_basis)
        for t in range(params.n_trees)
    ]
    workers = worker_count()
    if workers > 1 and params.n_trees > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_fit_tree_task, tasks,
                                    chunksize=max(1, params.n_trees // (4 * workers))))
    else:
        results = [_fit_tree_task(t) for t in tasks]

    trees = [r[0] for r in results]
    bags = [r[1] for r in results]
    forest = SpatialForest(trees=trees, bags=bags, delta_selected=float(delta),
                           variant="fixed", n_train=data.n)
    if params.n_trees >= 30:
        covered = np.zeros(data.n, dtype=bool)
        for bag in bags:
            oob = np.ones(data.n, dtype=bool)
            oob[bag] = False
            covered |= oob
        if not covered.all():
            warnings.warn(
                f"{int((~covered).sum())} training point(s) are in-bag for every tree",
                RuntimeWarning,
            )
    return forest


def _design_matrix(forest: SpatialForest, X, locations) -> np.ndarray:
    """Augment covariates with basis columns for basis-as-covariates forests."""
    X = np.asarray(X, dtype=float)
    if forest.covariate_basis is None:
        return X
    if locations is None:
        raise ValueError("locations required: this forest uses basis covariates")
    return np.hstack([X, evaluate_basis_at(forest.covariate_basis, locations)])


def oob_predict(forest: SpatialForest, data: LocatedDataset,
                include_spatial: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Average predictions over trees whose bag excludes each point.

    Returns ``(predictions, counts)``; points that are in-bag everywhere get
    NaN and a zero count.
    """
    X = _design_matrix(forest, data.X, data.coords)
    sums = np.zeros(data.n)
    counts = np.zeros(data.n, dtype=int)
    for tree, bag in zip(forest.trees, forest.bags):
        oob = np.ones(data.n, dtype=bool)
        oob[bag] = False
        idx = np.flatnonzero(oob)
        if idx.size == 0:
            continue
        sums[idx] += predict_tree(tree, X[idx], data.coords[idx], include_spatial)
        counts[idx] += 1
    preds = np.full(data.n, np.nan)
    got = counts > 0
    preds[got] = sums[got] / counts[got]
    return preds, counts


def _insample_mean_prediction(forest: SpatialForest, data: LocatedDataset,
                              include_spatial: bool) -> np.ndarray:
    X = _design_matrix(forest, data.X, data.coords)
    total = np.zeros(data.n)
    for tree in forest.trees:
        total += predict_tree(tree, X, data.coords, include_spatial)
    return total / forest.n_trees


def _oob_with_fallback(forest, data, include_spatial) -> np.ndarray:
    preds, counts = oob_predict(forest, data, include_spatial)
    miss = counts == 0
    if miss.any():
        warnings.warn(
            f"{int(miss.sum())} point(s) lack OOB coverage; "
            "falling back to the in-sample tree average there",
            RuntimeWarning,
        )
        preds[miss] = _insample_mean_prediction(forest, data, include_spatial)[miss]
    return preds


def _global_basis(data: LocatedDataset, params: ForestParams) -> tuple[SpatialBasis, np.ndarray]:
    tp = params.tree_params
    n_distinct = len(np.unique(data.coords, axis=0))
    k = min(tp.n_knots or default_knot_count(data.n), n_distinct)
    knots = select_knots(data.coords, k, seed=params.seed)
    return build_basis(data.coords, knots, tp.basis_kind, tp.basis_scale)


def pseudo_log_likelihood(data: LocatedDataset, delta: float,
                          params: ForestParams, delta_index: int = 0) -> float:
    """Profile pseudo-log-likelihood of delta.

    Fits a fixed-delta forest, forms residuals against the out-of-bag bagged
    estimate (no spatial term), profiles the scale as
    kappa = r' R(delta)^{-1} r / n on a global basis, and returns

        -(n/2) log kappa - (1/2) log |R(delta)| - n/2
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    forest = fit_fixed_delta(data, delta, params, delta_index)
    f_hat = _oob_with_fallback(forest, data, include_spatial=False)
    r = data.Z - f_hat
    _, S = _global_basis(data, params)
    lr = LowRankCorrelation(S, delta)
    kappa = max(float(r @ low_rank_inverse_apply(lr, r)) / data.n, KAPPA_FLOOR)
    return -0.5 * data.n * np.log(kappa) - 0.5 * low_rank_log_det(lr) - 0.5 * data.n


def fit_sprf_pl(data: LocatedDataset, params: ForestParams) -> tuple[SpatialForest, DeltaProfile]:
    """Grid-search delta by pseudo-likelihood, refit at the winner, and add a
    global ridge/BLUP spatial effect on the full-data OOB residuals."""
    grid = params.resolve_grid()
    values = np.array([
        pseudo_log_likelihood(data, d, params, gi) for gi, d in enumerate(grid)
    ])
    argbest = int(np.argmax(values))  # first max = smallest delta on ties
    profile = DeltaProfile(grid=grid, criterion_values=values, argbest=argbest)
    delta = float(grid[argbest])

    forest = fit_fixed_delta(data, delta, params, delta_index=argbest)
    f_hat = _oob_with_fallback(forest, data, include_spatial=False)
    r = data.Z - f_hat
    basis, S = _global_basis(data, params)
    lr = LowRankCorrelation(S, delta)
    kappa = max(float(r @ low_rank_inverse_apply(lr, r)) / data.n, KAPPA_FLOOR)
    forest.variant = "PL"
    forest.delta_selected = delta
    forest.global_basis = basis
    forest.global_eta = tree_blup(r, S, delta)
    forest.kappa_hat = kappa
    return forest, profile


def fit_sprf_np(data: LocatedDataset, params: ForestParams) -> tuple[SpatialForest, DeltaProfile]:
    """Grid-search delta by out-of-bag mean squared error of tree-plus-
    spatial-effect predictions; the winning forest is returned as fitted."""
    grid = params.resolve_grid()
    values = np.empty(len(grid))
    best_forest = None
    best_gi = 0
    for gi, d in enumerate(grid):
        forest = fit_fixed_delta(data, float(d), params, delta_index=gi)
        preds, counts = oob_predict(forest, data, include_spatial=True)
        got = counts > 0
        if not got.any():
            values[gi] = np.inf
        else:
            values[gi] = float(np.mean((data.Z[got] - preds[got]) ** 2))
        if best_forest is None or values[gi] < values[best_gi]:
            best_forest = forest
            best_gi = gi
    profile = DeltaProfile(grid=grid, criterion_values=values, argbest=best_gi)
    best_forest.variant = "NP"
    best_forest.delta_selected = float(grid[best_gi])
    return best_forest, profile


def predict_forest(forest: SpatialForest, X_new, locations_new=None) -> np.ndarray:
    """Ensemble prediction at new covariates/locations.

    NP and fixed variants average tree predictions including each tree's
    spatial effect; PL averages bare tree predictions and adds the global
    basis term.
    """
    X = _design_matrix(forest, X_new, locations_new)
    include_spatial = forest.variant != "PL"
    total = np.zeros(np.atleast_2d(X).shape[0])
    for tree in forest.trees:
        total += predict_tree(tree, X, locations_new, include_spatial)
    out = total / forest.n_trees
    if forest.variant == "PL" and forest.global_eta is not None and forest.global_eta.size:
        if locations_new is None:
            raise ValueError("locations_new required for spatial predictions")
        out = out + evaluate_basis_at(forest.global_basis, locations_new) @ forest.global_eta
    return out
