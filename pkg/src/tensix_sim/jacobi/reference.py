"""Host-side Jacobi sweep for the 5-point Laplace stencil.

The per-cell sum is evaluated in the same order as the device compute kernel
(W+E, then +N, then +S, then x0.25) with a BF16 round after every operation,
so the result is bitwise comparable with the simulated kernels.
"""

from __future__ import annotations

import numpy as np

from ..numerics import add_bits, f32_to_bf16_bits, mul_bits
from .domain import Domain

QUARTER = f32_to_bf16_bits(np.float32(0.25))


def stencil_step(u: np.ndarray) -> np.ndarray:
    """One sweep over a haloed grid; returns the new haloed grid."""
    new = u.copy()
    t = add_bits(u[1:-1, :-2], u[1:-1, 2:])
    t = add_bits(u[:-2, 1:-1], t)
    t = add_bits(u[2:, 1:-1], t)
    new[1:-1, 1:-1] = mul_bits(QUARTER, t)
    return new


def reference_solve(domain: Domain, iterations: int, grid: np.ndarray = None) -> np.ndarray:
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    u = domain.initial_grid() if grid is None else grid.copy()
    for _ in range(iterations):
        u = stencil_step(u)
    return u


def interior(grid: np.ndarray) -> np.ndarray:
    return grid[1:-1, 1:-1]
