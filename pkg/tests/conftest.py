import struct
from fractions import Fraction

import pytest


def f32_bits(x: float) -> int:
    return struct.unpack("<I", struct.pack("<f", x))[0]


def bits_f32(u: int) -> float:
    return struct.unpack("<f", struct.pack("<I", u & 0xFFFFFFFF))[0]


def bf16_value(b: int) -> float:
    return bits_f32(b << 16)


def nearest_bf16(x: float) -> int:
    """Scalar rounding oracle: scan the two BF16 neighbours of an FP32 value
    with exact rational distances, ties to the even mantissa."""
    u = f32_bits(x)
    if x != x:
        return (u >> 16) | 0x0040
    lo = u >> 16
    if (u & 0xFFFF) == 0:
        return lo
    target = Fraction(x)
    best = None
    for cand in (lo, lo + 1):
        v = bf16_value(cand)
        if v in (float("inf"), float("-inf")):
            # one ulp past the largest finite value counts as the overflow point
            dist = abs(Fraction(bits_f32(((cand - 1) << 16))) * 2 - Fraction(bits_f32(((cand - 2) << 16))) - target)
        else:
            dist = abs(Fraction(v) - target)
        key = (dist, cand & 1)
        if best is None or key < best[0]:
            best = (key, cand)
    return best[1]


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"


@pytest.fixture(scope="session")
def calibration_report():
    """One full fit per session; it takes tens of seconds."""
    from tensix_sim.calibration import calibrate
    return calibrate()
