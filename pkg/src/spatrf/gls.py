"""Split-scoring engine for correlation-adjusted regression trees.

A tree with k splits is the linear model C pi, where column t of C flags the
observations entering the terminal node created at step t. Profiling pi out
of the generalized least squares loss leaves everything depending on a single
projected precision matrix (here ``CharacteristicMatrix.omega``):

    omega = P - P C (C^T P C)^{-1} C^T P,    P = Sigma^{-1}

Splits are scored as gain = (c^T w)^2 / (c^T omega c) with w = omega y, and
accepting a split is a symmetric rank-one downdate of omega. Candidate splits
along a sorted covariate sweep share structure, so a whole sweep is scored
with cumulative sums instead of per-candidate solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg.blas import dger

# Relative floor for the gain denominator c^T omega c; scaled by trace(omega)/n.
DEFAULT_DTOL = 1e-10

INVALID_GAIN = -np.inf


@dataclass
class SplitIndicator:
    """Membership of a proposed new terminal node (bag row positions)."""

    member_indices: np.ndarray
    parent_node: int = 0

    def __post_init__(self):
        self.member_indices = np.asarray(self.member_indices, dtype=np.intp)
        if self.member_indices.size == 0:
            raise ValueError("a split indicator cannot be empty")


@dataclass
class CharacteristicMatrix:
    """Projected precision omega, its working vector w = omega y, and the
    number of accepted splits. Mutable; each tree owns one instance."""

    omega: np.ndarray
    w: np.ndarray
    n_splits: int = 0
    dtol: float = DEFAULT_DTOL

    @property
    def n(self) -> int:
        return self.omega.shape[0]

    def denominator_floor(self) -> float:
        """Absolute validity floor for c^T omega c, scaled to omega's size."""
        return self.dtol * max(np.trace(self.omega) / self.n, 0.0)


def init_characteristic(precision_apply, y, dtol: float = DEFAULT_DTOL) -> CharacteristicMatrix:
    """Start a tree: project the precision off the constant column.

    ``precision_apply`` maps an (n, m) matrix to Sigma^{-1} times it. The
    result is materialized densely because split scans read arbitrary
    entries of omega.
    """
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    P = np.asarray(precision_apply(np.eye(n)), dtype=float)
    P = 0.5 * (P + P.T)  # keep later rank-one updates exactly symmetric
    u = P.sum(axis=1)
    s = float(u.sum())
    if s <= 0.0:
        raise ValueError("invalid precision operator: 1' Sigma^{-1} 1 <= 0")
    omega = P - np.outer(u, u) / s
    return CharacteristicMatrix(omega=omega, w=omega @ y, n_splits=0, dtol=dtol)


def incremental_gain_scan(cm: CharacteristicMatrix, order) -> np.ndarray:
    """Score every prefix of ``order`` as a candidate new terminal node.

    Candidate i is ``order[:i+1]``; this matches a sorted-covariate sweep
    inside one node, where each candidate extends the previous by a single
    observation. Returns one gain per prefix. Prefixes whose denominator
    falls at or below the validity floor (the candidate lies in the span of
    existing columns, e.g. the full node) get ``INVALID_GAIN``.
    """
    order = np.asarray(order, dtype=np.intp)
    wv = cm.w[order]
    sub = cm.omega[np.ix_(order, order)]
    num = np.cumsum(wv) ** 2
    # den_i = sum_{a,b<=i} sub[a,b], accumulated as diag + twice the new column part
    colpart = np.cumsum(sub, axis=0)
    cross = np.zeros(order.size)
    if order.size > 1:
        idx = np.arange(1, order.size)
        cross[idx] = colpart[idx - 1, idx]
    den = np.cumsum(np.diag(sub) + 2.0 * cross)
    floor = cm.denominator_floor()
    gains = np.full(order.size, INVALID_GAIN)
    ok = den > floor
    gains[ok] = num[ok] / den[ok]
    return gains


def update_characteristic(cm: CharacteristicMatrix, chosen) -> CharacteristicMatrix:
    """Accept a split: rank-one downdate of omega and w, in place.

    Raises if the indicator is (numerically) in the span of the columns
    already absorbed, which would make the update singular.
    """
    members = chosen.member_indices if isinstance(chosen, SplitIndicator) else np.asarray(chosen, dtype=np.intp)
    # row gather + sum; equals the column sum because omega stays symmetric
    v = cm.omega[members, :].sum(axis=0)
    d = float(v[members].sum())
    if d <= cm.denominator_floor():
        raise ValueError("degenerate split: indicator lies in the current column span")
    cm.w -= (cm.w[members].sum() / d) * v
    # in-place symmetric rank-one downdate; pre-scaling by 1/sqrt(d) keeps the
    # update exactly symmetric, and the transposed view hands BLAS a
    # Fortran-order array so no copy is made
    vs = v / np.sqrt(d)
    dger(-1.0, vs, vs, a=cm.omega.T, overwrite_a=1)
    cm.n_splits += 1
    return cm


def brute_force_gls_loss(y, C, sigma_inv_apply) -> tuple[float, np.ndarray]:
    """Direct GLS fit of the tree design: the slow reference the incremental
    machinery is tested against.

    Returns ``(loss, pi_hat)`` with pi_hat = (C' P C)^{-1} C' P y and
    loss = (y - C pi)' P (y - C pi), P = Sigma^{-1}.
    """
    y = np.asarray(y, dtype=float)
    C = np.asarray(C, dtype=float)
    if C.ndim == 1:
        C = C.reshape(-1, 1)
    PC = np.asarray(sigma_inv_apply(C), dtype=float)
    A = C.T @ PC
    A = 0.5 * (A + A.T)
    eig = np.linalg.eigvalsh(A)
    if eig[0] <= 1e-12 * max(eig[-1], 1.0):
        raise ValueError("tree design matrix is rank deficient under Sigma^{-1}")
    pi = np.linalg.solve(A, PC.T @ y)
    resid = y - C @ pi
    loss = float(resid @ np.asarray(sigma_inv_apply(resid), dtype=float))
    return loss, pi
