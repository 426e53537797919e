"""Closed-form optimal strategy without slippage for one exponential kernel.

With ``G(t) = exp(-t / tau)``, pure power impact ``sign(x)|x|^c`` and
``gamma = 0``, the optimal impact state and the traded volume are explicit.
The traded volume has block trades at both ends of the horizon. The scheme
approaches this curve as ``gamma`` decreases.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid_paths import OUSignalParams, TimeGrid, left_integral


@dataclass(frozen=True)
class BenchmarkParams:
    """Decay time ``tau`` and power ``c``; the impact scale is fixed to one."""

    tau: float
    c: float
    drift: OUSignalParams
    grid: TimeGrid

    def __post_init__(self) -> None:
        if not self.tau > 0:
            raise ValueError(f"decay time tau must be > 0, got {self.tau}")
        if not 0.5 <= self.c <= 1.0:
            raise ValueError(f"power c must lie in [1/2, 1], got {self.c}")


def _power_rate(x: np.ndarray, c: float) -> np.ndarray:
    # sign(x) (|x| / (1 + c))^(1/c)
    return np.sign(x) * (np.abs(x) / (1.0 + c)) ** (1.0 / c)


def explicit_optimal_impact(params: BenchmarkParams, drift, alpha) -> tuple[np.ndarray, np.ndarray]:
    """Optimal impact ``I*`` and its inverse-power state ``J*`` per path.

    Interior values follow the closed form; both ends are pinned to zero.
    """
    drift = np.atleast_2d(np.asarray(drift, dtype=float))
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    s = alpha + params.tau * drift
    I = s / (1.0 + params.c)
    I[:, 0] = 0.0
    I[:, -1] = 0.0
    J = np.sign(I) * np.abs(I) ** (1.0 / params.c)
    return I, J


@dataclass
class BenchmarkInventory:
    """``Q*`` on the grid with ``Q[:, 0] = 0`` before the opening block.

    Interior columns hold the smooth part. The last column is the position after
    the closing block. ``smooth_end`` is the position just before that block.
    """

    Q: np.ndarray
    bulk_start: np.ndarray
    bulk_end: np.ndarray
    smooth_end: np.ndarray


def explicit_optimal_inventory(params: BenchmarkParams, drift, alpha) -> BenchmarkInventory:
    drift = np.atleast_2d(np.asarray(drift, dtype=float))
    alpha = np.atleast_2d(np.asarray(alpha, dtype=float))
    tau, c = params.tau, params.c
    j = _power_rate(alpha + tau * drift, c)
    running = left_integral(j, params.grid.delta) / tau
    Q = j + running
    bulk_start = j[:, 0].copy()
    smooth_end = Q[:, -1].copy()
    # alpha_T = 0 so the closing block undoes J at T-
    bulk_end = -np.sign(drift[:, -1]) * np.abs(tau * drift[:, -1] / (1.0 + c)) ** (1.0 / c)
    Q[:, 0] = 0.0
    Q[:, -1] = smooth_end + bulk_end
    return BenchmarkInventory(Q, bulk_start, bulk_end, smooth_end)


def interior_distance(scheme_inventory: np.ndarray, benchmark: np.ndarray, delta: float) -> float:
    """Discrete ``L^2`` distance of the path means on ``t_1 .. t_{N-2}``."""
    a = np.atleast_2d(scheme_inventory).mean(axis=0)[1:-1]
    b = np.atleast_2d(benchmark).mean(axis=0)[1:-1]
    return math.sqrt(delta * float(np.sum((a - b) ** 2)))


def comparison_report(params: BenchmarkParams, scheme_inventory: np.ndarray, bench: BenchmarkInventory,
                      scheme_x0: float | None = None, gamma: float | None = None) -> dict:
    out = {"interior_l2_distance": interior_distance(scheme_inventory, bench.Q, params.grid.delta),
           "tau": params.tau, "c": params.c,
           "mean_bulk_start": float(bench.bulk_start.mean()),
           "mean_bulk_end": float(bench.bulk_end.mean())}
    if gamma is not None:
        out["gamma"] = gamma
    if scheme_x0 is not None:
        # the scheme runs with the piecewise impact; the closed form has none
        out["scheme_impact_threshold_x0"] = scheme_x0
    return out


def write_overlay_csv(path: str | Path, grid: TimeGrid, scheme_inventory: np.ndarray,
                      bench: BenchmarkInventory, paths: int = 5) -> None:
    """Time series of scheme inventory and ``Q*`` for the path mean and a few paths."""
    X = np.atleast_2d(scheme_inventory)
    Q = bench.Q
    rows = [("mean", X.mean(axis=0), Q.mean(axis=0), bench.bulk_start.mean(), bench.bulk_end.mean())]
    for m in range(min(paths, X.shape[0])):
        rows.append((str(m), X[m], Q[m], bench.bulk_start[m], bench.bulk_end[m]))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["path", "time_years", "scheme_inventory_shares", "benchmark_inventory_shares",
                     "bulk_trade_start_shares", "bulk_trade_end_shares"])
        for name, x, q, b0, bT in rows:
            for t, xv, qv in zip(grid.points, x, q):
                wr.writerow([name, f"{t:.10g}", f"{xv:.12e}", f"{qv:.12e}", f"{b0:.12e}", f"{bT:.12e}"])
