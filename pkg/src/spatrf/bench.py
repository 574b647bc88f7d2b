"""Timing harness contrasting the incremental split scan with per-candidate
GLS refits.

For a full sweep of one node of size n, the incremental scheme costs O(n^2)
total while refitting the GLS loss per candidate costs O(n^2) *each*, O(n^3)
for the sweep. The bench times both on the same problem so log-log slopes
separate the two regimes.
"""

from __future__ import annotations

import time

import numpy as np

from .geometry import exponential_covariance
from .gls import brute_force_gls_loss, incremental_gain_scan, init_characteristic


def _sweep_incremental(cm, order) -> np.ndarray:
    return incremental_gain_scan(cm, order)


def _sweep_naive(y, order, sigma_inv) -> np.ndarray:
    n = y.shape[0]
    apply_inv = lambda M: sigma_inv @ M
    loss_root, _ = brute_force_gls_loss(y, np.ones((n, 1)), apply_inv)
    gains = np.empty(order.size - 1)
    C = np.ones((n, 2))
    C[:, 1] = 0.0
    for i in range(order.size - 1):
        C[order[i], 1] = 1.0
        loss_i, _ = brute_force_gls_loss(y, C, apply_inv)
        gains[i] = loss_root - loss_i
    return gains


def bench_split_scan(sizes, seed: int = 0, repeats: int = 3) -> list[dict]:
    """Time a full root-node sweep per size, for both scan strategies.

    Returns one row per size with total sweep seconds and per-candidate
    seconds for each path. The covariance inversion (shared setup) is not
    timed; the contrast is purely in candidate scoring.
    """
    rows = []
    for n in sizes:
        rng = np.random.default_rng(np.random.SeedSequence((seed, n)))
        locations = rng.uniform(0.0, 1.0, size=(n, 2))
        y = rng.standard_normal(n)
        cov = exponential_covariance(locations, sill=1.0, corr_range=0.3, nugget=0.1)
        sigma_inv = np.linalg.inv(cov.matrix)
        sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
        order = rng.permutation(n)

        cm = init_characteristic(lambda M: sigma_inv @ M, y)
        t_inc = np.inf
        for _ in range(repeats):
            t0 = time.perf_counter()
            _sweep_incremental(cm, order)
            t_inc = min(t_inc, time.perf_counter() - t0)

        t0 = time.perf_counter()
        _sweep_naive(y, order, sigma_inv)
        t_naive = time.perf_counter() - t0

        rows.append({
            "n": int(n),
            "incremental_sweep_s": t_inc,
            "naive_sweep_s": t_naive,
            "incremental_per_candidate_s": t_inc / (n - 1),
            "naive_per_candidate_s": t_naive / (n - 1),
        })
    return rows


def loglog_slope(ns, times) -> float:
    """Least-squares slope of log(time) against log(n)."""
    return float(np.polyfit(np.log(np.asarray(ns, dtype=float)),
                            np.log(np.asarray(times, dtype=float)), 1)[0])
