"""Virtual-time cost coefficients and the constant-power energy model.

All times are nanoseconds unless a name says otherwise. The per-request model
is affine: a request costs its issue overhead plus a per-byte streaming term,
plus a completion latency that is only exposed when someone waits on it.
Requests also occupy the DRAM bank that serves them; banks are shared by every
core and are what saturates under multi-core streaming.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

DEFAULT_POWER_WATTS = 52.0

# page sizes measured for interleaved placement
INTERLEAVE_PAGES = (1024, 2048, 4096, 8192, 16384, 32768, 65536)


@dataclass
class CostParams:
    read_req_ns: float = 105.0
    write_req_ns: float = 24.0
    read_byte_ns: float = 0.118
    write_byte_ns: float = 0.150
    sync_roundtrip_ns: float = 650.0
    write_sync_roundtrip_ns: float = 150.0
    noncontig_req_ns: float = 30.0
    memcpy_byte_ns: float = 1.39
    memcpy_call_ns: float = 480.0
    tileop_ns: float = 150.0
    batch_overhead_ns: float = 135.0
    bank_bw_bytes_per_s: float = 26.8e9
    bank_req_ns: float = 20.0
    page_req_ns: float = 400.0
    interleave_latency_ns: float = 1000.0
    interleave_factor: dict = field(default_factory=lambda: {p: 1.0 for p in INTERLEAVE_PAGES})
    power_watts: float = DEFAULT_POWER_WATTS

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "interleave_factor":
                if any(x < 0 for x in v.values()):
                    raise ValueError("interleave factors must be >= 0")
            elif v < 0:
                raise ValueError(f"{f.name} must be >= 0")
        if self.bank_bw_bytes_per_s <= 0:
            raise ValueError("bank bandwidth must be > 0")

    # -- lookups used by the NoC engine and the closed-form predictors --

    def req_ns(self, kind: str) -> float:
        return self.read_req_ns if kind == "read" else self.write_req_ns

    def byte_ns(self, kind: str) -> float:
        return self.read_byte_ns if kind == "read" else self.write_byte_ns

    def latency_ns(self, kind: str, interleaved: bool = False) -> float:
        base = self.sync_roundtrip_ns if kind == "read" else self.write_sync_roundtrip_ns
        return base + (self.interleave_latency_ns if interleaved else 0.0)

    def page_factor(self, page_size: Optional[int]) -> float:
        if page_size is None:
            return 1.0
        pages = sorted(self.interleave_factor)
        logs = np.log2(pages)
        vals = [self.interleave_factor[p] for p in pages]
        return float(np.interp(math.log2(page_size), logs, vals))

    def issue_ns(self, kind: str, contiguous: bool, page_size: Optional[int] = None) -> float:
        cost = self.req_ns(kind)
        if not contiguous:
            cost += self.noncontig_req_ns
        if page_size is not None:
            cost += self.page_req_ns
        return cost

    def occupancy_ns(self, kind: str, length: int, contiguous: bool,
                     page_size: Optional[int] = None) -> float:
        return (self.issue_ns(kind, contiguous, page_size)
                + length * self.byte_ns(kind) * self.page_factor(page_size))

    def bank_ns(self, length: int) -> float:
        return self.bank_req_ns + length * 1e9 / self.bank_bw_bytes_per_s

    def memcpy_ns(self, n_bytes: int, calls: int = 1) -> float:
        return calls * self.memcpy_call_ns + n_bytes * self.memcpy_byte_ns

    # -- parameter file --

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            if f.name == "interleave_factor":
                for p in sorted(self.interleave_factor):
                    out[f"interleave_factor_{p}"] = self.interleave_factor[p]
            else:
                out[f.name] = getattr(self, f.name)
        return out

    def dumps(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in self.to_dict().items())

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "CostParams":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs: dict = {}
        factors: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key.startswith("interleave_factor_"):
                factors[int(key.rsplit("_", 1)[1])] = float(value)
            elif key in names:
                kwargs[key] = float(value)
            else:
                raise ValueError(f"line {lineno}: unknown parameter {key!r}")
        if factors:
            kwargs["interleave_factor"] = factors
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "CostParams":
        return cls.loads(Path(path).read_text())

    def replace(self, **changes) -> "CostParams":
        """Copy with some coefficients changed; ``interleave_factor_<page>``
        keys update single entries of the factor table."""
        factors = dict(self.interleave_factor)
        for key in [k for k in changes if k.startswith("interleave_factor_")]:
            page = int(key.rsplit("_", 1)[1])
            if page not in factors:
                raise ValueError(f"no interleave factor for page size {page}")
            factors[page] = float(changes.pop(key))
        return dataclasses.replace(self, interleave_factor=factors, **changes)


def _fmt(v: float) -> str:
    return repr(float(v))


@functools.lru_cache(maxsize=1)
def _default_text() -> str:
    return resources.files("tensix_sim.data").joinpath("params.txt").read_text()


def default_params() -> CostParams:
    """The checked-in calibrated coefficients (a fresh copy each call)."""
    return CostParams.loads(_default_text())


def predict_transaction(params: CostParams, kind: str, length: int, contiguous: bool = True,
                        synced: bool = False, page_size: Optional[int] = None) -> float:
    """Nanoseconds for one request issued on an idle engine.

    ``synced`` adds the completion round trip, which is what a barrier right
    after a single request exposes.
    """
    if kind not in ("read", "write"):
        raise ValueError(f"kind must be read or write, not {kind!r}")
    if length <= 0:
        raise ValueError("length must be positive")
    cost = params.occupancy_ns(kind, length, contiguous, page_size)
    if synced:
        cost += params.latency_ns(kind, page_size is not None)
    return cost


def energy(params: CostParams, virtual_seconds: float) -> float:
    if virtual_seconds < 0:
        raise ValueError("time must be >= 0")
    return params.power_watts * virtual_seconds


def gpt_per_s(points: int, iterations: int, virtual_seconds: float) -> float:
    if virtual_seconds <= 0:
        raise ValueError("time must be > 0")
    return points * iterations / virtual_seconds / 1e9
