"""Uniform fit/predict harness: method registry, out-of-sample R^2, and the
repeated k-fold cross-validation driver."""

from __future__ import annotations

import numpy as np

from .baselines import fit_rf_with_basis_covariates, fit_smoother, fit_two_step
from .data import LocatedDataset
from .forest import ForestParams, fit_fixed_delta, fit_sprf_np, fit_sprf_pl
from .tree import TreeParams

METHODS = ("rf", "smoother", "rf-smooth", "smooth-rf", "rf-basis", "sprf-pl", "sprf-np")


def r2_score(y_true, y_pred) -> float:
    """Out-of-sample R^2 = 1 - SSE/SST with SST about the mean of y_true,
    so the constant mean predictor scores exactly 0."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    sse = float(np.sum((y_true - y_pred) ** 2))
    sst = float(np.sum((y_true - np.mean(y_true)) ** 2))
    if sst == 0.0:
        return 1.0 if sse == 0.0 else -np.inf
    return 1.0 - sse / sst


def make_fitter(method: str, *, n_trees: int = 200, mtry: int | None = None,
                min_node_size: int = 5, max_splits: int | None = None,
                n_knots: int | None = None, delta_grid=None, lambda_grid=None):
    """Build a ``fitter(data, seed) -> model`` callable for a method name.

    Every returned model implements ``predict(X_new, locations_new)``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

    def forest_params(seed: int) -> ForestParams:
        return ForestParams(
            n_trees=n_trees,
            tree_params=TreeParams(mtry=mtry, min_node_size=min_node_size,
                                   max_splits=max_splits, n_knots=n_knots),
            delta_grid=delta_grid,
            seed=seed,
        )

    if method == "rf":
        return lambda data, seed: fit_fixed_delta(data, 0.0, forest_params(seed))
    if method == "smoother":
        return lambda data, seed: fit_smoother(data, lambda_grid, n_knots=n_knots,
                                               seed=seed)
    if method == "rf-smooth":
        return lambda data, seed: fit_two_step(data, "rf_first", forest_params(seed),
                                               lambda_grid, n_knots=n_knots)
    if method == "smooth-rf":
        return lambda data, seed: fit_two_step(data, "smoother_first",
                                               forest_params(seed), lambda_grid,
                                               n_knots=n_knots)
    if method == "rf-basis":
        return lambda data, seed: fit_rf_with_basis_covariates(
            data, forest_params(seed), n_knots=n_knots)
    if method == "sprf-pl":
        return lambda data, seed: fit_sprf_pl(data, forest_params(seed))[0]
    return lambda data, seed: fit_sprf_np(data, forest_params(seed))[0]


def _derived_seed(*key) -> int:
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def cross_validate(data: LocatedDataset, fitter, k_folds: int = 10,
                   n_repeats: int = 10, seed: int = 0) -> tuple[list[float], float]:
    """Repeated k-fold cross-validation, pooled R^2 per repeat.

    Folds are a seeded random partition; each repeat reshuffles. A fit
    failure inside a repeat marks that repeat failed (NaN) and the run
    continues. Returns the per-repeat scores and their mean over the
    non-failed repeats.
    """
    if data.Z is None:
        raise ValueError("cross-validation needs a response")
    if k_folds < 2:
        raise ValueError("k_folds must be at least 2")
    if data.n < k_folds:
        raise ValueError(f"need at least k_folds={k_folds} observations")
    if callable(fitter) is False:
        fitter = make_fitter(fitter)

    scores: list[float] = []
    for rep in range(n_repeats):
        rng = np.random.default_rng(np.random.SeedSequence((seed, rep)))
        folds = np.array_split(rng.permutation(data.n), k_folds)
        preds = np.empty(data.n)
        try:
            for fi, hold in enumerate(folds):
                train = np.setdiff1d(np.arange(data.n), hold)
                model = fitter(data.subset(train), _derived_seed(seed, rep, fi))
                preds[hold] = model.predict(data.X[hold], data.coords[hold])
            scores.append(r2_score(data.Z, preds))
        except Exception:
            scores.append(float("nan"))
    valid = [s for s in scores if not np.isnan(s)]
    mean = float(np.mean(valid)) if valid else float("nan")
    return scores, mean
