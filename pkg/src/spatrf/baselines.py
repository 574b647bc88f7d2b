"""Comparison methods: plain random forest, a ridge-on-basis spatial
smoother, the two two-step combinations, and a random forest with basis
columns appended as covariates.

All fitted models expose ``predict(X_new, locations_new)`` so one harness
can drive every method.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import LocatedDataset
from .forest import ForestParams, SpatialForest, _oob_with_fallback, fit_fixed_delta
from .geometry import (SpatialBasis, build_basis, default_knot_count,
                       evaluate_basis_at, select_knots)

TWO_STEP_ORDERS = ("rf_first", "smoother_first")


@dataclass
class SmootherModel:
    """Spatial smoother: ridge regression on the radial basis with an
    unpenalized intercept, penalty chosen by k-fold cross-validation."""

    basis: SpatialBasis
    coefficients: np.ndarray
    intercept: float
    lambda_selected: float

    def predict(self, X_new=None, locations_new=None) -> np.ndarray:
        if locations_new is None:
            raise ValueError("locations_new required for smoother predictions")
        S = evaluate_basis_at(self.basis, locations_new)
        return self.intercept + (S @ self.coefficients if self.coefficients.size else 0.0)


@dataclass
class TwoStepModel:
    """Stage-2 model fit to stage-1 residuals; prediction is the exact sum."""

    order: str
    stage1: object
    stage2: object

    def predict(self, X_new=None, locations_new=None) -> np.ndarray:
        return (np.asarray(self.stage1.predict(X_new, locations_new))
                + np.asarray(self.stage2.predict(X_new, locations_new)))


def _ridge_solve(S: np.ndarray, y: np.ndarray, lam: float) -> tuple[float, np.ndarray]:
    """Penalized least squares with unpenalized intercept."""
    n, k = S.shape
    if k == 0:
        return float(np.mean(y)), np.zeros(0)
    A = np.empty((k + 1, k + 1))
    A[0, 0] = n
    A[0, 1:] = S.sum(axis=0)
    A[1:, 0] = A[0, 1:]
    A[1:, 1:] = S.T @ S
    A[1:, 1:][np.diag_indices(k)] += lam
    b = np.concatenate([[y.sum()], S.T @ y])
    sol = np.linalg.solve(A, b)
    return float(sol[0]), sol[1:]


def default_lambda_grid(S: np.ndarray) -> np.ndarray:
    """12 log-spaced penalties scaled by trace(S'S)/k (scale-free coverage)."""
    k = S.shape[1]
    scale = float(np.trace(S.T @ S) / k) if k else 1.0
    return np.logspace(-4, 4, 12) * scale


def fit_smoother(data: LocatedDataset, lambda_grid=None, n_knots: int | None = None,
                 n_folds: int = 10, seed: int = 0) -> SmootherModel:
    """Fit the basis-ridge smoother with CV-selected penalty.

    Ties in CV error go to the larger (smoother) penalty; the final model is
    refit on all data at the winning penalty.
    """
    if data.Z is None:
        raise ValueError("training data must carry a response")
    n = data.n
    n_distinct = len(np.unique(data.coords, axis=0))
    k = min(n_knots or default_knot_count(n), n_distinct)
    knots = select_knots(data.coords, k, seed=seed)
    basis, S = build_basis(data.coords, knots)

    if S.shape[1] == 0:
        intercept, coef = _ridge_solve(S, data.Z, 1.0)
        return SmootherModel(basis=basis, coefficients=coef, intercept=intercept,
                             lambda_selected=1.0)

    if lambda_grid is None:
        lambda_grid = default_lambda_grid(S)
    lambda_grid = np.asarray(lambda_grid, dtype=float)
    if lambda_grid.size == 0 or np.any(lambda_grid <= 0):
        raise ValueError("lambda_grid must be nonempty and positive")

    if n < 10:
        n_folds = min(n, 5)
        warnings.warn(f"small sample (n={n}); reducing CV folds to {n_folds}",
                      RuntimeWarning)
    n_folds = min(n_folds, n)

    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), n_folds)
    best_lam = None
    best_mse = np.inf
    for lam in lambda_grid:
        sse = 0.0
        for hold in folds:
            train = np.setdiff1d(np.arange(n), hold)
            intercept, coef = _ridge_solve(S[train], data.Z[train], lam)
            pred = intercept + S[hold] @ coef
            sse += float(np.sum((data.Z[hold] - pred) ** 2))
        mse = sse / n
        if mse <= best_mse:  # ties break to the larger penalty
            best_mse = mse
            best_lam = float(lam)
    intercept, coef = _ridge_solve(S, data.Z, best_lam)
    return SmootherModel(basis=basis, coefficients=coef, intercept=intercept,
                         lambda_selected=best_lam)


def _smoother_cv_predictions(model: SmootherModel, data: LocatedDataset,
                             n_folds: int = 10, seed: int = 0) -> np.ndarray:
    """Held-out predictions at the selected penalty (optimism control for
    two-step residuals)."""
    n = data.n
    S = evaluate_basis_at(model.basis, data.coords)
    n_folds = min(n_folds, n)
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(n), n_folds)
    out = np.empty(n)
    for hold in folds:
        train = np.setdiff1d(np.arange(n), hold)
        intercept, coef = _ridge_solve(S[train], data.Z[train], model.lambda_selected)
        out[hold] = intercept + (S[hold] @ coef if coef.size else 0.0)
    return out


def _with_response(data: LocatedDataset, z: np.ndarray) -> LocatedDataset:
    return LocatedDataset(ids=list(data.ids), coords=data.coords, X=data.X, Z=z,
                          covariate_names=list(data.covariate_names),
                          coord_names=list(data.coord_names),
                          response_name=data.response_name)


def fit_two_step(data: LocatedDataset, order: str,
                 rf_params: ForestParams | None = None, lambda_grid=None,
                 n_knots: int | None = None) -> TwoStepModel:
    """Fit one model, then the other on its held-out residuals.

    Stage-1 residuals use OOB predictions for the forest stage and 10-fold
    CV predictions for the smoother stage, so stage 2 sees honest errors
    rather than the near-zero in-sample ones.
    """
    if order not in TWO_STEP_ORDERS:
        raise ValueError(f"order must be one of {TWO_STEP_ORDERS}, got {order!r}")
    if rf_params is None:
        rf_params = ForestParams()
    if order == "rf_first":
        rf = fit_fixed_delta(data, 0.0, rf_params)
        stage1_fit = _oob_with_fallback(rf, data, include_spatial=False)
        resid = _with_response(data, data.Z - stage1_fit)
        smoother = fit_smoother(resid, lambda_grid, n_knots=n_knots,
                                seed=rf_params.seed)
        return TwoStepModel(order=order, stage1=rf, stage2=smoother)
    smoother = fit_smoother(data, lambda_grid, n_knots=n_knots, seed=rf_params.seed)
    stage1_fit = _smoother_cv_predictions(smoother, data, seed=rf_params.seed)
    resid = _with_response(data, data.Z - stage1_fit)
    rf = fit_fixed_delta(resid, 0.0, rf_params)
    return TwoStepModel(order=order, stage1=smoother, stage2=rf)


def fit_rf_with_basis_covariates(data: LocatedDataset,
                                 rf_params: ForestParams | None = None,
                                 n_knots: int | None = None) -> SpatialForest:
    """Plain (delta = 0) forest on covariates augmented with global basis
    columns; prediction rebuilds the augmentation at new locations."""
    if rf_params is None:
        rf_params = ForestParams()
    n_distinct = len(np.unique(data.coords, axis=0))
    k = min(n_knots or default_knot_count(data.n), n_distinct)
    knots = select_knots(data.coords, k, seed=rf_params.seed)
    basis, S = build_basis(data.coords, knots)
    aug = LocatedDataset(
        ids=list(data.ids),
        coords=data.coords,
        X=np.hstack([data.X, S]),
        Z=data.Z,
        covariate_names=list(data.covariate_names)
        + [f"basis{j}" for j in range(S.shape[1])],
        coord_names=list(data.coord_names),
        response_name=data.response_name,
    )
    forest = fit_fixed_delta(aug, 0.0, rf_params)
    forest.covariate_basis = basis
    return forest
