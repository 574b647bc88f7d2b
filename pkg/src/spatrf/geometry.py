"""Spatial building blocks: knot selection, radial basis matrices, low-rank
correlation algebra, and dense exponential covariances for simulation.

Locations are plain (n, d) float arrays in projected (planar) units.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist

BASIS_KINDS = ("thin_plate", "gaussian_rbf")

# Columns whose root-mean-square falls below this are dropped as degenerate.
_DEGENERATE_COLUMN_RMS = 1e-12


def _as_locations(locations) -> np.ndarray:
    loc = np.asarray(locations, dtype=float)
    if loc.ndim == 1:
        loc = loc.reshape(-1, 1)
    if loc.ndim != 2:
        raise ValueError("locations must be an (n, d) array")
    if loc.size and not np.all(np.isfinite(loc)):
        raise ValueError("locations contain non-finite coordinates")
    return loc


def default_knot_count(n: int) -> int:
    """Default number of knots for n source points: min(50, n // 4), at least 1."""
    return max(1, min(50, n // 4))


@dataclass(frozen=True)
class KnotSet:
    """Spatial anchor points for radial basis functions."""

    knots: np.ndarray          # (k, d)
    selection_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "knots", _as_locations(self.knots))
        if len(self.knots) < 1:
            raise ValueError("a KnotSet needs at least one knot")

    @property
    def k(self) -> int:
        return len(self.knots)


def select_knots(locations, k: int, seed: int = 0) -> KnotSet:
    """Pick k knots by farthest-point sampling over the distinct locations.

    The first knot is the distinct location closest to the centroid; each
    subsequent knot maximizes the minimum distance to the knots chosen so
    far. Ties break toward the lowest input index, so the result is fully
    deterministic (the seed is recorded for provenance only).
    """
    loc = _as_locations(locations)
    if k < 1:
        raise ValueError("k must be at least 1")
    # distinct rows, keeping first-occurrence order so ties resolve by input index
    _, first_idx = np.unique(loc, axis=0, return_index=True)
    distinct = loc[np.sort(first_idx)]
    if len(distinct) < k:
        raise ValueError(
            f"insufficient distinct locations: need {k}, have {len(distinct)}"
        )
    centroid = distinct.mean(axis=0)
    D = cdist(distinct, distinct)
    chosen = [int(np.argmin(np.linalg.norm(distinct - centroid, axis=1)))]
    min_dist = D[chosen[0]].copy()
    while len(chosen) < k:
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        np.minimum(min_dist, D[nxt], out=min_dist)
    return KnotSet(knots=distinct[chosen], selection_seed=seed)


@dataclass(frozen=True)
class SpatialBasis:
    """Radial basis over a knot set, with stored training standardization.

    ``column_norms`` holds the training root-mean-square of each retained
    column; evaluation at new locations reuses these constants so training
    and prediction rows live on the same scale. Degenerate (zero-norm)
    columns found at build time are dropped, and ``kept`` records which
    knots survive.
    """

    knot_set: KnotSet
    kind: str = "thin_plate"
    scale: float | None = None
    column_norms: np.ndarray = field(default_factory=lambda: np.empty(0))
    kept: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))

    @property
    def k(self) -> int:
        return len(self.kept)

    @property
    def active_knots(self) -> np.ndarray:
        return self.knot_set.knots[self.kept]


def _raw_basis_rows(locations: np.ndarray, knots: np.ndarray, kind: str,
                    scale: float | None) -> np.ndarray:
    if kind not in BASIS_KINDS:
        raise ValueError(f"unknown basis kind {kind!r}; expected one of {BASIS_KINDS}")
    if locations.size and locations.shape[1] != knots.shape[1]:
        raise ValueError(
            f"coordinate dimension mismatch: locations have d={locations.shape[1]}, "
            f"knots have d={knots.shape[1]}"
        )
    if locations.shape[0] == 0:
        return np.empty((0, len(knots)))
    r = cdist(locations, knots)
    if kind == "thin_plate":
        # r^2 log r, continuous limit 0 at r = 0
        with np.errstate(divide="ignore"):
            out = np.where(r > 0.0, r * r * np.log(np.where(r > 0.0, r, 1.0)), 0.0)
        return out
    if scale is None or scale <= 0:
        raise ValueError("gaussian_rbf basis requires scale > 0")
    return np.exp(-(r * r) / (2.0 * scale * scale))


def build_basis(locations, knot_set: KnotSet, kind: str = "thin_plate",
                scale: float | None = None) -> tuple[SpatialBasis, np.ndarray]:
    """Build the training basis matrix S and its standardization.

    Returns ``(basis, S)`` where S is (n, k_retained) with unit
    root-mean-square columns. Columns with zero norm (pathological
    geometries) are dropped with a warning.
    """
    loc = _as_locations(locations)
    if loc.shape[0] == 0:
        raise ValueError("cannot build a basis from an empty location list")
    raw = _raw_basis_rows(loc, knot_set.knots, kind, scale)
    norms = np.sqrt(np.mean(raw * raw, axis=0))
    kept = np.flatnonzero(norms > _DEGENERATE_COLUMN_RMS)
    if len(kept) < knot_set.k:
        warnings.warn(
            f"dropping {knot_set.k - len(kept)} degenerate basis column(s)",
            RuntimeWarning,
            stacklevel=2,
        )
    basis = SpatialBasis(knot_set=knot_set, kind=kind, scale=scale,
                         column_norms=norms[kept], kept=kept)
    S = raw[:, kept] / norms[kept] if len(kept) else raw[:, kept]
    return basis, S


def evaluate_basis_at(basis: SpatialBasis, new_locations) -> np.ndarray:
    """Basis rows at new locations, using the stored training column norms."""
    loc = _as_locations(new_locations)
    if loc.shape[0] == 0:
        return np.empty((0, basis.k))
    raw = _raw_basis_rows(loc, basis.active_knots, basis.kind, basis.scale)
    return raw / basis.column_norms if basis.k else raw


class LowRankCorrelation:
    """Correlation R(delta) = delta * S S^T + (1 - delta) * I with fast algebra.

    The inverse is applied through the rank-k identity

        R^{-1} = (1-delta)^{-1} [I - S (((1-delta)/delta) I_k + S^T S)^{-1} S^T]

    so applying R^{-1} to an (n, m) matrix costs O(n k m + k^3) instead of
    O(n^3). ``delta`` must lie in [0, 1); R(1) can be singular.
    """

    def __init__(self, basis_rows: np.ndarray, delta: float):
        if not 0.0 <= delta < 1.0:
            raise ValueError(f"delta must be in [0, 1), got {delta}")
        self.S = np.asarray(basis_rows, dtype=float)
        if self.S.ndim != 2:
            raise ValueError("basis_rows must be a 2-D array")
        self.n, self.k = self.S.shape
        self.delta = float(delta)
        self._factor = None
        if self.delta > 0.0 and self.k > 0:
            core = self.S.T @ self.S
            core[np.diag_indices_from(core)] += (1.0 - self.delta) / self.delta
            self._factor = cho_factor(core)

    def matrix(self) -> np.ndarray:
        """Materialize R(delta) densely (testing / small-n use)."""
        out = self.delta * (self.S @ self.S.T)
        out[np.diag_indices_from(out)] += 1.0 - self.delta
        return out


def low_rank_inverse_apply(lr: LowRankCorrelation, M: np.ndarray) -> np.ndarray:
    """Compute R(delta)^{-1} M without forming the n x n inverse."""
    M = np.asarray(M, dtype=float)
    if lr.delta == 0.0:
        return M.copy()
    if lr._factor is None:  # zero-column basis: R = (1 - delta) I
        return M / (1.0 - lr.delta)
    return (M - lr.S @ cho_solve(lr._factor, lr.S.T @ M)) / (1.0 - lr.delta)


def low_rank_log_det(lr: LowRankCorrelation) -> float:
    """log |R(delta)| via the matrix determinant lemma, O(n k^2 + k^3)."""
    if lr.delta == 0.0:
        return 0.0
    core = lr.delta * (lr.S.T @ lr.S)
    core[np.diag_indices_from(core)] += 1.0 - lr.delta
    sign, logdet = np.linalg.slogdet(core)
    if sign <= 0:
        raise ValueError("low-rank correlation is not positive definite")
    return (lr.n - lr.k) * np.log(1.0 - lr.delta) + logdet


@dataclass(frozen=True)
class DenseCovariance:
    """Dense n x n covariance with exponential-family parameters."""

    matrix: np.ndarray
    sill: float
    corr_range: float
    nugget: float

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def exponential_covariance(locations, sill: float, corr_range: float,
                           nugget: float = 0.0) -> DenseCovariance:
    """Entry ij = sill * exp(-||s_i - s_j|| / corr_range) + nugget * 1{i=j}."""
    if sill <= 0:
        raise ValueError("sill must be positive")
    if corr_range <= 0:
        raise ValueError("corr_range must be positive")
    if nugget < 0:
        raise ValueError("nugget must be nonnegative")
    loc = _as_locations(locations)
    d = cdist(loc, loc)
    m = sill * np.exp(-d / corr_range)
    if nugget:
        m[np.diag_indices_from(m)] += nugget
    return DenseCovariance(matrix=m, sill=float(sill), corr_range=float(corr_range),
                           nugget=float(nugget))


def sample_gp(cov: DenseCovariance, seed: int) -> np.ndarray:
    """Draw one mean-zero Gaussian vector with the given covariance.

    Uses a Cholesky factor times a standard-normal vector, so the draw is
    deterministic given the seed.
    """
    try:
        chol = np.linalg.cholesky(cov.matrix)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance not positive definite") from exc
    rng = np.random.default_rng(seed)
    return chol @ rng.standard_normal(cov.n)
