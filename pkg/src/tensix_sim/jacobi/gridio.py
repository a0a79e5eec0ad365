"""Grid files: a 16-byte header followed by little-endian BF16 values.

Header layout (little endian): 4-byte magic ``TSG1``, then ``nx``, ``ny`` and
the iteration count as unsigned 32-bit integers. The payload is the haloed
grid, ``(ny + 2)`` rows of ``(nx + 2)`` values, boundary included.
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..numerics import bf16_bits_to_f32

MAGIC = b"TSG1"
HEADER = struct.Struct("<4sIII")


class GridFormatError(ValueError):
    pass


@dataclass
class GridFile:
    nx: int
    ny: int
    iterations: int
    bits: np.ndarray  # (ny + 2, nx + 2) uint16

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint16)
        if self.bits.shape != (self.ny + 2, self.nx + 2):
            raise GridFormatError(f"grid shape {self.bits.shape} does not match {self.nx}x{self.ny} plus halo")

    def to_bytes(self) -> bytes:
        return HEADER.pack(MAGIC, self.nx, self.ny, self.iterations) + self.bits.astype("<u2").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "GridFile":
        if len(data) < HEADER.size:
            raise GridFormatError("file shorter than the header")
        magic, nx, ny, iterations = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise GridFormatError(f"bad magic {magic!r}")
        expect = HEADER.size + 2 * (nx + 2) * (ny + 2)
        if len(data) != expect:
            raise GridFormatError(f"expected {expect} bytes for a {nx}x{ny} grid, got {len(data)}")
        bits = np.frombuffer(data, dtype="<u2", offset=HEADER.size).reshape(ny + 2, nx + 2)
        return cls(nx, ny, iterations, bits.astype(np.uint16))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GridFile":
        return cls.from_bytes(Path(path).read_bytes())

    def to_csv(self) -> str:
        """Haloed grid as decimal values, one grid row per line."""
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        for row in bf16_bits_to_f32(self.bits):
            w.writerow([repr(float(v)) for v in row])
        return out.getvalue()


def save_grid(path, bits: np.ndarray, iterations: int) -> GridFile:
    ny, nx = (s - 2 for s in np.shape(bits))
    g = GridFile(nx, ny, iterations, bits)
    g.save(path)
    return g


def load_grid(path) -> GridFile:
    return GridFile.load(path)
