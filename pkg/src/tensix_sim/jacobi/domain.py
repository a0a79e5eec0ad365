"""Grid domain, boundary conditions and the DRAM layout of the two grid copies.

The solver works on a *haloed* grid of ``(ny + 2) x (nx + 2)`` BF16 values:
row 0 and row ``ny + 1`` hold the top and bottom boundary, column 0 and
column ``nx + 1`` the left and right boundary; corners are unused (zero).

In DRAM each haloed row is stored either

* ``padded`` (default): a 32-byte lane on each side of the interior, the
  boundary value sitting in the lane element adjacent to the interior, so
  interior rows start 32-byte aligned and tile writes never fault; or
* ``compact``: the haloed row as-is, ``nx + 2`` elements per row. Only row 0
  starts aligned.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from ..dram import Dram, DramBuffer, Placement, SingleBank
from ..numerics import f32_to_bf16_bits

PAD_ELEMS = 16  # 32 bytes of BF16

Boundary = Union[float, np.ndarray]


class DomainError(ValueError):
    pass


@dataclass
class Domain:
    nx: int
    ny: int
    left: Boundary = 1.0
    right: Boundary = 0.0
    top: Boundary = 0.0
    bottom: Boundary = 0.0
    init: float = 0.0
    padded: bool = True

    def __post_init__(self):
        if self.nx <= 0 or self.ny <= 0:
            raise DomainError("grid dimensions must be positive")

    @property
    def points(self) -> int:
        return self.nx * self.ny

    @property
    def pitch_elems(self) -> int:
        return self.nx + 2 * PAD_ELEMS if self.padded else self.nx + 2

    @property
    def pitch_bytes(self) -> int:
        return 2 * self.pitch_elems

    @property
    def size_bytes(self) -> int:
        return (self.ny + 2) * self.pitch_bytes

    def halo_col_elem(self, col: int) -> int:
        """Element index inside a stored row of haloed column ``col``."""
        return col + PAD_ELEMS - 1 if self.padded else col

    def address(self, base: int, row: int, col: int) -> int:
        """Byte address of haloed cell ``(row, col)`` in a buffer at ``base``."""
        return base + row * self.pitch_bytes + 2 * self.halo_col_elem(col)

    def _side(self, value: Boundary, n: int) -> np.ndarray:
        arr = np.broadcast_to(np.asarray(value, dtype=np.float32), (n,))
        return f32_to_bf16_bits(arr)

    def initial_grid(self) -> np.ndarray:
        """Haloed grid of BF16 bits with boundaries and the initial guess."""
        g = np.zeros((self.ny + 2, self.nx + 2), dtype=np.uint16)
        g[1:-1, 1:-1] = f32_to_bf16_bits(np.float32(self.init))
        g[1:-1, 0] = self._side(self.left, self.ny)
        g[1:-1, -1] = self._side(self.right, self.ny)
        g[0, 1:-1] = self._side(self.top, self.nx)
        g[-1, 1:-1] = self._side(self.bottom, self.nx)
        return g

    def to_image(self, grid: np.ndarray) -> np.ndarray:
        """Haloed grid -> raw DRAM bytes in this domain's layout."""
        rows = np.zeros((self.ny + 2, self.pitch_elems), dtype="<u2")
        c0 = self.halo_col_elem(0)
        rows[:, c0:c0 + self.nx + 2] = grid
        return rows.reshape(-1).view(np.uint8)

    def from_image(self, image: np.ndarray) -> np.ndarray:
        rows = np.asarray(image, dtype=np.uint8).view("<u2").reshape(self.ny + 2, self.pitch_elems)
        c0 = self.halo_col_elem(0)
        return rows[:, c0:c0 + self.nx + 2].astype(np.uint16)

    def allocate(self, dram: Dram, placement: Placement = SingleBank(0)) -> tuple[DramBuffer, DramBuffer]:
        """Allocate d1/d2 and load the initial grid into both."""
        image = self.to_image(self.initial_grid())
        d1 = dram.allocate(placement, self.size_bytes)
        d2 = dram.allocate(placement, self.size_bytes)
        dram.host_write(d1, 0, image)
        dram.host_write(d2, 0, image)
        return d1, d2

    def read_grid(self, dram: Dram, buffer: DramBuffer) -> np.ndarray:
        return self.from_image(dram.host_read(buffer))


def result_buffer(d1: DramBuffer, d2: DramBuffer, iterations: int) -> DramBuffer:
    """Iteration k reads d1 when k is even; the result of k iterations is in
    d1 for even k and d2 for odd k."""
    return d1 if iterations % 2 == 0 else d2


def parity_buffers(d1: DramBuffer, d2: DramBuffer, iteration: int) -> tuple[DramBuffer, DramBuffer]:
    return (d1, d2) if iteration % 2 == 0 else (d2, d1)
