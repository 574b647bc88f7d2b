"""Hot-loop kernels for the per-round candidate-split scan.

One round of tree growth scores, for every sampled covariate and every
splittable terminal node, all prefixes of the node's members sorted by that
covariate. The numba kernel and the numpy fallback perform the identical
arithmetic in the identical order, so the two paths are bit-for-bit
interchangeable (asserted in the test suite).
"""

from __future__ import annotations

import os

import numpy as np

from .gls import INVALID_GAIN, CharacteristicMatrix

try:  # pragma: no cover - exercised implicitly by the dispatch test
    if os.environ.get("SPATRF_DISABLE_NUMBA", "0") == "1":
        raise ImportError("numba disabled via SPATRF_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _scan_round_jit(omega, w, node_of, slot_of, node_sizes, orders, xsorted,
                    min_node, floor):  # pragma: no cover - numba-compiled
    n_cov = orders.shape[0]
    n = orders.shape[1]
    n_slots = node_sizes.shape[0]

    best_gain = np.full((n_cov, n_slots), INVALID_GAIN)
    best_prefix = np.zeros((n_cov, n_slots), dtype=np.int64)
    cut_lo = np.zeros((n_cov, n_slots))
    cut_hi = np.zeros((n_cov, n_slots))

    offsets = np.zeros(n_slots + 1, dtype=np.int64)
    for s in range(n_slots):
        offsets[s + 1] = offsets[s] + node_sizes[s]

    seg = np.empty(offsets[n_slots], dtype=np.int64)
    segx = np.empty(offsets[n_slots])
    cursor = np.empty(n_slots, dtype=np.int64)

    for c in range(n_cov):
        # bucket the globally sorted order by node, preserving sort order
        for s in range(n_slots):
            cursor[s] = offsets[s]
        for t in range(n):
            row = orders[c, t]
            slot = slot_of[node_of[row]]
            if slot >= 0:
                seg[cursor[slot]] = row
                segx[cursor[slot]] = xsorted[c, t]
                cursor[slot] += 1
        for s in range(n_slots):
            base = offsets[s]
            q = node_sizes[s]
            sw = 0.0
            den = 0.0
            for i in range(q - 1):
                li = seg[base + i]
                row = omega[li]  # omega is symmetric; row reads stay in cache
                cross = 0.0
                for mm in range(i):
                    cross += row[seg[base + mm]]
                den += row[li] + 2.0 * cross
                sw += w[li]
                if segx[base + i] < segx[base + i + 1]:  # distinct-value boundary
                    lo_size = i + 1
                    if lo_size >= min_node and q - lo_size >= min_node and den > floor:
                        g = (sw * sw) / den
                        if g > best_gain[c, s]:
                            best_gain[c, s] = g
                            best_prefix[c, s] = lo_size
                            cut_lo[c, s] = segx[base + i]
                            cut_hi[c, s] = segx[base + i + 1]
    return best_gain, best_prefix, cut_lo, cut_hi


def _scan_round_py(omega, w, node_of, slot_of, node_sizes, orders, xsorted,
                   min_node, floor):
    """Numpy twin of the jit kernel, built on incremental_gain_scan."""
    n_cov = orders.shape[0]
    n_slots = node_sizes.shape[0]
    best_gain = np.full((n_cov, n_slots), INVALID_GAIN)
    best_prefix = np.zeros((n_cov, n_slots), dtype=np.int64)
    cut_lo = np.zeros((n_cov, n_slots))
    cut_hi = np.zeros((n_cov, n_slots))

    cm = CharacteristicMatrix(omega=omega, w=w, n_splits=0)
    for c in range(n_cov):
        order = orders[c]
        xv = xsorted[c]
        slots = slot_of[node_of[order]]
        for s in range(n_slots):
            inside = slots == s
            seg = order[inside]
            segx = xv[inside]
            q = seg.size
            if q < 2:
                continue
            gains = _prefix_gains(cm, seg, floor)
            sizes = np.arange(1, q + 1)
            valid = (
                (sizes >= min_node)
                & (q - sizes >= min_node)
                & np.concatenate([segx[:-1] < segx[1:], [False]])
                & (gains > INVALID_GAIN)
            )
            if not valid.any():
                continue
            cand = np.flatnonzero(valid)
            b = cand[np.argmax(gains[cand])]  # argmax keeps the first (lowest cut) on ties
            best_gain[c, s] = gains[b]
            best_prefix[c, s] = b + 1
            cut_lo[c, s] = segx[b]
            cut_hi[c, s] = segx[b + 1]
    return best_gain, best_prefix, cut_lo, cut_hi


def _prefix_gains(cm, seg, floor):
    # same arithmetic as incremental_gain_scan but with an explicit floor
    wv = cm.w[seg]
    sub = cm.omega[np.ix_(seg, seg)]
    num = np.cumsum(wv) ** 2
    colpart = np.cumsum(sub, axis=0)
    cross = np.zeros(seg.size)
    if seg.size > 1:
        idx = np.arange(1, seg.size)
        cross[idx] = colpart[idx - 1, idx]
    den = np.cumsum(np.diag(sub) + 2.0 * cross)
    gains = np.full(seg.size, INVALID_GAIN)
    ok = den > floor
    gains[ok] = num[ok] / den[ok]
    return gains


def scan_round(omega, w, node_of, slot_of, node_sizes, orders, xsorted,
               min_node, floor, use_numba: bool | None = None):
    """Best candidate per (sampled covariate, splittable node) for one round.

    Returns ``(best_gain, best_prefix, cut_lo, cut_hi)``, each of shape
    (n_cov, n_slots); invalid cells carry ``INVALID_GAIN`` / prefix 0.
    """
    if use_numba is None:
        use_numba = HAVE_NUMBA
    impl = _scan_round_jit if use_numba else _scan_round_py
    return impl(
        np.ascontiguousarray(omega),
        np.ascontiguousarray(w),
        np.asarray(node_of, dtype=np.int64),
        np.asarray(slot_of, dtype=np.int64),
        np.asarray(node_sizes, dtype=np.int64),
        np.ascontiguousarray(orders, dtype=np.int64),
        np.ascontiguousarray(xsorted),
        np.int64(min_node),
        float(floor),
    )


__all__ = ["scan_round", "HAVE_NUMBA"]
