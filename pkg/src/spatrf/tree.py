"""Correlation-adjusted regression trees.

A tree is grown best-first: every round samples ``mtry`` covariates, scores
all admissible splits of every current terminal node under the GLS loss via
the characteristic-matrix engine, and accepts the single best candidate.
Leaf weights are the GLS coefficients of the final tree design; each tree
also carries a ridge (BLUP) estimate of its spatial random effect.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._kernels import scan_round
from .data import LocatedDataset
from .geometry import (LowRankCorrelation, SpatialBasis, build_basis,
                       default_knot_count, evaluate_basis_at,
                       low_rank_inverse_apply, select_knots)
from .gls import (DEFAULT_DTOL, INVALID_GAIN, brute_force_gls_loss,
                  init_characteristic, update_characteristic)


@dataclass
class TreeParams:
    """Knobs for a single tree.

    ``mtry`` covariates are sampled per split round (default p // 3, at
    least 1); ``min_node_size`` is the smallest admissible terminal node;
    ``max_splits`` of None means grow until no node can be split. Basis
    settings control the per-tree spatial random effect when delta > 0.
    """

    mtry: int | None = None
    min_node_size: int = 5
    max_splits: int | None = None
    dtol: float = DEFAULT_DTOL
    seed: int = 0
    n_knots: int | None = None
    basis_kind: str = "thin_plate"
    basis_scale: float | None = None

    def __post_init__(self):
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be at least 1")
        if self.max_splits is not None and self.max_splits < 0:
            raise ValueError("max_splits must be nonnegative")

    def resolve_mtry(self, p: int) -> int:
        if self.mtry is None:
            return max(1, p // 3)
        if not 1 <= self.mtry <= p:
            raise ValueError(f"mtry must be in [1, {p}], got {self.mtry}")
        return self.mtry


@dataclass
class SplitRecord:
    """One accepted split: node split, covariate, cutpoint (low side goes
    left) and the bag positions entering the new (low-side) terminal node."""

    node_id: int
    covariate_index: int
    cutpoint: float
    member_indices: np.ndarray


@dataclass
class SpatialTree:
    """A fitted tree: ordered split records (the tree design columns), GLS
    leaf weights, per-tree spatial effect, and routing structure."""

    splits: list[SplitRecord]
    leaf_weights: np.ndarray               # pi, length n_splits + 1
    eta_hat: np.ndarray
    basis: SpatialBasis | None
    delta: float
    in_bag_indices: np.ndarray             # original dataset indices (multiset)
    internal_nodes: dict[int, tuple[int, float, int, int]] = field(default_factory=dict)
    leaf_values: dict[int, float] = field(default_factory=dict)
    n_covariates: int = 0

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_values)


def tree_blup(residuals, basis_rows, delta: float) -> np.ndarray:
    """Ridge / BLUP estimate of the spatial random effect on residuals.

    Solves (S'S + lambda I) eta = S'r with lambda = (1 - delta) / delta.
    delta = 0 is the infinite-penalty limit, giving eta = 0.
    """
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    S = np.asarray(basis_rows, dtype=float)
    if S.ndim != 2:
        raise ValueError("basis_rows must be 2-D")
    k = S.shape[1]
    if delta == 0.0 or k == 0:
        return np.zeros(k)
    r = np.asarray(residuals, dtype=float)
    lam = (1.0 - delta) / delta
    A = S.T @ S
    A[np.diag_indices_from(A)] += lam
    return np.linalg.solve(A, S.T @ r)


# Gains within this band of the round maximum count as tied; mathematically
# equal candidates (e.g. one partition reachable through several covariates)
# must not be separated by last-bit float noise, or the documented tie order
# (covariate, cutpoint, node id) would be meaningless.
GAIN_TIE_REL = 1e-9
GAIN_TIE_ABS = 1e-12


def _pick_best(sampled, splittable, best_gain, best_prefix, cut_lo, cut_hi):
    """Winner: max gain, with near-ties broken by lowest covariate index,
    then lowest cutpoint, then lowest node id."""
    valid = best_gain != INVALID_GAIN
    if not valid.any():
        return None
    gmax = best_gain[valid].max()
    thresh = gmax - max(GAIN_TIE_REL * abs(gmax), GAIN_TIE_ABS)
    ci, si = np.nonzero(valid & (best_gain >= thresh))
    cuts = 0.5 * (cut_lo[ci, si] + cut_hi[ci, si])
    covs = np.asarray(sampled)[ci]
    nodes = np.asarray(splittable)[si]
    k = np.lexsort((nodes, cuts, covs))[0]
    return (int(covs[k]), int(nodes[k]), int(best_prefix[ci[k], si[k]]),
            float(cuts[k]), float(best_gain[ci[k], si[k]]))


def fit_tree(data: LocatedDataset, bag, delta: float, params: TreeParams,
             rng=None, basis: SpatialBasis | None = None) -> SpatialTree:
    """Grow one correlation-adjusted tree on a bootstrap bag.

    When ``basis`` is None and delta > 0, knots are re-selected from the
    distinct in-bag locations by farthest-point sampling; passing a basis
    shares knots across trees. With delta = 0 the correlation is the
    identity, no basis is built and the spatial effect is empty.
    """
    if data.Z is None:
        raise ValueError("training data must carry a response")
    if not 0.0 <= delta < 1.0:
        raise ValueError(f"delta must be in [0, 1), got {delta}")
    bag = np.asarray(bag, dtype=np.intp)
    if bag.size == 0:
        raise ValueError("bag must be nonempty")
    if rng is None:
        rng = np.random.default_rng(params.seed)

    Xb = np.ascontiguousarray(data.X[bag])
    Yb = data.Z[bag]
    coords_b = data.coords[bag]
    n_b, p = Xb.shape
    mtry = params.resolve_mtry(p)
    m = params.min_node_size
    max_splits = n_b if params.max_splits is None else params.max_splits

    Sb = np.empty((n_b, 0))
    if delta > 0.0:
        if basis is None:
            n_distinct = len(np.unique(coords_b, axis=0))
            k = min(params.n_knots or default_knot_count(n_b), n_distinct)
            knot_set = select_knots(coords_b, k, seed=params.seed)
            basis, Sb = build_basis(coords_b, knot_set, params.basis_kind,
                                    params.basis_scale)
        else:
            Sb = evaluate_basis_at(basis, coords_b)
        lr = LowRankCorrelation(Sb, delta)
        cm = init_characteristic(lambda M: low_rank_inverse_apply(lr, M), Yb,
                                 dtol=params.dtol)
    else:
        basis = None
        cm = init_characteristic(lambda M: np.asarray(M, dtype=float), Yb,
                                 dtol=params.dtol)

    # presorted covariate orders are reused by every round's sweeps
    orders_all = np.empty((p, n_b), dtype=np.int64)
    xsort_all = np.empty((p, n_b))
    for j in range(p):
        orders_all[j] = np.argsort(Xb[:, j], kind="stable")
        xsort_all[j] = Xb[orders_all[j], j]

    node_of = np.zeros(n_b, dtype=np.int64)
    node_size = {0: n_b}
    internal_nodes: dict[int, tuple[int, float, int, int]] = {}
    next_id = 1
    splits: list[SplitRecord] = []

    def run_scan(covariates, splittable):
        slot_of = np.full(next_id, -1, dtype=np.int64)
        slot_of[splittable] = np.arange(len(splittable))
        sizes = np.array([node_size[v] for v in splittable], dtype=np.int64)
        result = scan_round(cm.omega, cm.w, node_of, slot_of, sizes,
                            orders_all[covariates], xsort_all[covariates],
                            m, cm.denominator_floor())
        return _pick_best(covariates, splittable, *result)

    while len(splits) < max_splits:
        splittable = sorted(v for v, q in node_size.items() if q >= 2 * m)
        if not splittable:
            break
        if mtry < p:
            sampled = np.sort(rng.choice(p, size=mtry, replace=False))
        else:
            sampled = np.arange(p)
        best = run_scan(sampled, splittable)
        if best is None and mtry < p:
            # degenerate round: certify against every covariate before stopping
            best = run_scan(np.arange(p), splittable)
        if best is None:
            break
        j, node, prefix_len, cut, _gain = best
        og = orders_all[j]
        seg = og[node_of[og] == node]
        members = seg[:prefix_len].copy()
        rest = seg[prefix_len:]
        update_characteristic(cm, members)
        left, right = next_id, next_id + 1
        next_id += 2
        internal_nodes[node] = (j, cut, left, right)
        node_of[members] = left
        node_of[rest] = right
        node_size[left] = members.size
        node_size[right] = rest.size
        del node_size[node]
        splits.append(SplitRecord(node_id=node, covariate_index=j,
                                  cutpoint=cut, member_indices=members))

    C = np.ones((n_b, len(splits) + 1))
    for t, rec in enumerate(splits):
        col = np.zeros(n_b)
        col[rec.member_indices] = 1.0
        C[:, t + 1] = col
    if delta > 0.0:
        _, pi = brute_force_gls_loss(Yb, C, lambda M: low_rank_inverse_apply(lr, M))
    else:
        _, pi = brute_force_gls_loss(Yb, C, lambda M: np.asarray(M, dtype=float))
    fitted = C @ pi
    leaf_ids, first_pos = np.unique(node_of, return_index=True)
    leaf_values = {int(v): float(fitted[i]) for v, i in zip(leaf_ids, first_pos)}
    residuals = Yb - fitted
    eta = tree_blup(residuals, Sb, delta) if delta > 0.0 else np.zeros(0)

    return SpatialTree(
        splits=splits,
        leaf_weights=pi,
        eta_hat=eta,
        basis=basis,
        delta=delta,
        in_bag_indices=bag,
        internal_nodes=internal_nodes,
        leaf_values=leaf_values,
        n_covariates=p,
    )


def predict_tree(tree: SpatialTree, X_new, locations_new=None,
                 include_spatial: bool = True) -> np.ndarray:
    """Route rows down the tree; optionally add the spatial effect term.

    ``locations_new`` is required when the spatial term is requested and the
    tree carries a basis.
    """
    X_new = np.asarray(X_new, dtype=float)
    if X_new.ndim == 1:
        X_new = X_new.reshape(1, -1)
    if X_new.shape[1] != tree.n_covariates:
        raise ValueError(
            f"covariate count mismatch: model expects {tree.n_covariates} "
            f"columns, got {X_new.shape[1]}"
        )
    out = np.empty(X_new.shape[0])
    stack = [(0, np.arange(X_new.shape[0]))]
    while stack:
        node, idx = stack.pop()
        if idx.size == 0:
            continue
        if node in tree.internal_nodes:
            j, cut, left, right = tree.internal_nodes[node]
            mask = X_new[idx, j] <= cut
            stack.append((left, idx[mask]))
            stack.append((right, idx[~mask]))
        else:
            out[idx] = tree.leaf_values[node]
    if include_spatial and tree.basis is not None and tree.eta_hat.size:
        if locations_new is None:
            raise ValueError("locations_new required for spatial predictions")
        out = out + evaluate_basis_at(tree.basis, locations_new) @ tree.eta_hat
    return out
