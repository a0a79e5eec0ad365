"""BF16 scalar arithmetic and the 32x32 tile type driven by the FPU model.

BF16 values are carried as raw ``uint16`` bit patterns. Arithmetic widens to
FP32, performs one IEEE operation, and rounds back to BF16 with
round-to-nearest-even. Every tile operation rounds at its own boundary, so a
chain of tile operations is bit-reproducible by a scalar loop doing the same.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import ml_dtypes
import numpy as np

TILE_DIM = 32
TILE_ELEMS = TILE_DIM * TILE_DIM
TILE_BYTES = TILE_ELEMS * 2

BF16_QNAN_BIT = 0x0040


class NumericsError(Exception):
    pass


def f32_to_bf16_bits(x) -> np.ndarray:
    """Round FP32 values to BF16 bit patterns (round-to-nearest-even).

    NaNs are returned quiet with their sign and upper payload bits kept;
    infinities and signed zeros pass through unchanged.
    """
    arr = np.asarray(x, dtype=np.float32)
    u = arr.view(np.uint32)
    # integer array arithmetic wraps silently; wrap-around only hits NaNs,
    # which are replaced below
    with np.errstate(over="ignore"):
        out = ((u + ((u >> 16) & 1) + 0x7FFF) >> 16).astype(np.uint16)
    nan = np.isnan(arr)
    if nan.any():
        out = np.where(nan, ((u >> 16) | BF16_QNAN_BIT).astype(np.uint16), out)
    return out


def bf16_bits_to_f32(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint16)
    return (b.astype(np.uint32) << 16).view(np.float32)


@dataclass(frozen=True)
class BF16:
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits <= 0xFFFF:
            raise NumericsError(f"not a 16-bit pattern: {self.bits:#x}")

    @classmethod
    def from_float(cls, x: float) -> "BF16":
        return cls(int(f32_to_bf16_bits(np.float32(x))))

    def to_float(self) -> float:
        return float(bf16_bits_to_f32(np.uint16(self.bits)))

    def is_nan(self) -> bool:
        return (self.bits & 0x7FFF) > 0x7F80

    def __float__(self) -> float:
        return self.to_float()


def fp32_to_bf16(x: float) -> BF16:
    return BF16.from_float(x)


@dataclass
class Tile32:
    """A 32x32 tile of BF16 bit patterns stored row-major."""

    elems: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.elems, dtype=np.uint16).reshape(-1)
        if e.size != TILE_ELEMS:
            raise NumericsError(f"tile needs {TILE_ELEMS} elements, got {e.size}")
        self.elems = e

    @classmethod
    def zeros(cls) -> "Tile32":
        return cls(np.zeros(TILE_ELEMS, dtype=np.uint16))

    @classmethod
    def from_floats(cls, values) -> "Tile32":
        return cls(f32_to_bf16_bits(np.asarray(values, dtype=np.float32).reshape(-1)))

    @classmethod
    def from_bytes(cls, data) -> "Tile32":
        buf = bytes(data)
        if len(buf) != TILE_BYTES:
            raise NumericsError(f"tile serialization is {TILE_BYTES} bytes, got {len(buf)}")
        return cls(np.frombuffer(buf, dtype="<u2").copy())

    def to_bytes(self) -> bytes:
        return self.elems.astype("<u2").tobytes()

    def to_floats(self) -> np.ndarray:
        return bf16_bits_to_f32(self.elems).reshape(TILE_DIM, TILE_DIM)

    def __eq__(self, other):
        if not isinstance(other, Tile32):
            return NotImplemented
        return bool(np.array_equal(self.elems, other.elems))


_BF16 = ml_dtypes.bfloat16


def _widen(bits: np.ndarray) -> np.ndarray:
    return np.left_shift(bits, 16, dtype=np.uint32).view(np.float32)


def _round_inplace(s: np.ndarray) -> np.ndarray:
    """``f32_to_bf16_bits`` for a scratch FP32 array it may clobber."""
    u = s.view(np.uint32)
    nan = np.isnan(s)
    quiet = ((u >> 16) | BF16_QNAN_BIT).astype(np.uint16) if nan.any() else None
    t = u >> 16
    t &= 1
    t += 0x7FFF
    t += u
    t >>= 16
    out = t.astype(np.uint16)
    if quiet is not None:
        out[nan] = quiet[nan]
    return out


def _has_nan(bits: np.ndarray) -> bool:
    return bool(np.any((bits & 0x7FFF) > 0x7F80))


def _nan_result(op, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    x = _widen(a)
    op(x, _widen(b), out=x)
    out = _round_inplace(x)
    # FP32 hardware returns the first NaN operand; take the larger quiet
    # pattern instead so the operation stays bitwise commutative
    both = ((a & 0x7FFF) > 0x7F80) & ((b & 0x7FFF) > 0x7F80)
    if both.any():
        out[both] = np.maximum(a[both], b[both]) | BF16_QNAN_BIT
    return out


# ml_dtypes rounds exactly like ``f32_to_bf16_bits`` except that it
# canonicalises NaN payloads, so NaN results take the exact path.

def add_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``add_bits`` for same-shape uint16 arrays; caller silences FP warnings."""
    out = (a.view(_BF16) + b.view(_BF16)).view(np.uint16)
    return _nan_result(np.add, a, b) if _has_nan(out) else out


def mul_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = (a.view(_BF16) * b.view(_BF16)).view(np.uint16)
    return _nan_result(np.multiply, a, b) if _has_nan(out) else out


def add_bits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise BF16 add on bit arrays of any (matching) shape."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint16), np.asarray(b, dtype=np.uint16))
    with np.errstate(all="ignore"):
        return add_raw(a, b)


def mul_bits(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a, b = np.broadcast_arrays(np.asarray(a, dtype=np.uint16), np.asarray(b, dtype=np.uint16))
    with np.errstate(all="ignore"):
        return mul_raw(a, b)


def add_tiles(a: Tile32, b: Tile32) -> Tile32:
    return Tile32(add_bits(a.elems, b.elems))


def mul_tiles(a: Tile32, b: Tile32) -> Tile32:
    return Tile32(mul_bits(a.elems, b.elems))


def scalar_tile(c: BF16) -> Tile32:
    return Tile32(np.full(TILE_ELEMS, c.bits, dtype=np.uint16))


@dataclass
class TileRegisterFile:
    """Destination tile registers shared by unpack/math/pack.

    ``acquire``/``release`` bracket a session; reading a slot that was never
    written during the current session is an error.
    """

    n_slots: int = 8
    slots: list = field(default_factory=list)
    acquired: bool = False

    def __post_init__(self):
        if self.n_slots < 8:
            raise NumericsError("register file needs at least 8 slots")
        self.slots = [None] * self.n_slots

    def acquire(self):
        if self.acquired:
            raise NumericsError("DoubleAcquire: tile registers already held")
        self.acquired = True
        self.slots = [None] * self.n_slots

    def release(self):
        if not self.acquired:
            raise NumericsError("ReleaseWithoutAcquire")
        self.acquired = False

    def _check(self, slot: int):
        if not self.acquired:
            raise NumericsError("tile registers used outside an acquire/release session")
        if not 0 <= slot < self.n_slots:
            raise NumericsError(f"no such register slot {slot}")

    def write(self, slot: int, bits: np.ndarray):
        self._check(slot)
        self.slots[slot] = bits

    def read(self, slot: int) -> np.ndarray:
        self._check(slot)
        value: Optional[np.ndarray] = self.slots[slot]
        if value is None:
            raise NumericsError(f"UnwrittenSlot: register {slot} was never written")
        return value
