"""Two-dimensional block decomposition of the interior across worker cores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class IndivisibleDomain(ValueError):
    pass


@dataclass(frozen=True)
class Subdomain:
    core: int
    y0: int
    y1: int
    x0: int
    x1: int

    @property
    def ny(self) -> int:
        return self.y1 - self.y0

    @property
    def nx(self) -> int:
        return self.x1 - self.x0

    @property
    def empty(self) -> bool:
        return self.ny == 0 or self.nx == 0

    def halo_rows(self) -> tuple[int, int]:
        """Haloed-grid rows read by this block (inclusive range)."""
        return self.y0, self.y1 + 1

    def halo_cols(self) -> tuple[int, int]:
        return self.x0, self.x1 + 1


def _split(n_units: int, parts: int) -> list[int]:
    sizes = [len(a) for a in np.array_split(np.arange(n_units), parts)]
    return [0] + list(np.cumsum(sizes))


def decompose(nx: int, ny: int, cores_x: int, cores_y: int, unit_x: int = 1, unit_y: int = 1,
              strict: bool = True) -> list[Subdomain]:
    """Split an ``nx x ny`` interior into ``cores_y x cores_x`` blocks.

    Blocks are whole multiples of ``unit_x``/``unit_y`` (the kernel's batch
    granularity). With ``strict`` every block must be the same size; otherwise
    units are spread as evenly as possible and surplus cores get empty blocks.
    Cores are numbered row-major over the block grid.
    """
    if cores_x < 1 or cores_y < 1:
        raise ValueError("core counts must be >= 1")
    if nx % unit_x or ny % unit_y:
        raise IndivisibleDomain(f"{nx}x{ny} is not a multiple of the {unit_x}x{unit_y} batch")
    ux, uy = nx // unit_x, ny // unit_y
    if strict and (ux % cores_x or uy % cores_y):
        raise IndivisibleDomain(f"{nx}x{ny} does not split evenly over {cores_x}x{cores_y} cores")
    xs = [b * unit_x for b in _split(ux, cores_x)]
    ys = [b * unit_y for b in _split(uy, cores_y)]
    out = []
    for j in range(cores_y):
        for i in range(cores_x):
            out.append(Subdomain(j * cores_x + i, int(ys[j]), int(ys[j + 1]), int(xs[i]), int(xs[i + 1])))
    return out


def core_grid_shape(cores: int) -> tuple[int, int]:
    """Pick ``(cores_x, cores_y)`` for a core count, favouring splits in Y."""
    if cores < 1:
        raise ValueError("cores must be >= 1")
    best = (1, cores)
    for cx in range(1, int(cores ** 0.5) + 1):
        if cores % cx == 0:
            best = (cx, cores // cx)
    return best
