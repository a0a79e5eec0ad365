"""Banked device DRAM with the 256-bit alignment fault model.

Buffers hold their logical contents in one flat byte array; the placement only
decides which bank serves each byte (and therefore what an access costs).
Addresses handed to :meth:`Dram.raw_read` / :meth:`Dram.raw_write` are
``buffer.base_address + offset``.

An access whose address is not a multiple of the alignment does not fail
loudly on the device. Reads return ``length`` bytes starting at the
aligned-down address. Writes either raise (``Strict``) or land at the
aligned-down address (``PermissiveCorrupting``). Both report an
:class:`AccessFault`.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

ALIGNMENT = 32
MAX_PAGE_SIZE = 65536


class DramError(Exception):
    pass


class OutOfMemory(DramError):
    pass


class InvalidPageSize(DramError):
    pass


class OutOfBounds(DramError):
    pass


class UnalignedWrite(DramError):
    def __init__(self, fault: "AccessFault"):
        super().__init__(
            f"unaligned DRAM write at {fault.requested_address:#x} "
            f"(would land at {fault.effective_address:#x})"
        )
        self.fault = fault


class WriteMode(enum.Enum):
    STRICT = "strict"
    PERMISSIVE_CORRUPTING = "permissive"


class FaultKind(enum.Enum):
    UNALIGNED_READ = "UnalignedRead"
    UNALIGNED_WRITE = "UnalignedWrite"


@dataclass(frozen=True)
class AccessFault:
    kind: FaultKind
    requested_address: int
    effective_address: int


@dataclass
class DramConfig:
    bank_count: int = 8
    bank_size: int = 1 << 30
    alignment: int = ALIGNMENT
    write_mode: WriteMode = WriteMode.STRICT

    def __post_init__(self):
        if self.bank_count < 1:
            raise ValueError("bank_count must be >= 1")
        if self.alignment <= 0 or self.alignment & (self.alignment - 1):
            raise ValueError("alignment must be a power of two")


@dataclass(frozen=True)
class SingleBank:
    bank: int = 0


@dataclass(frozen=True)
class Interleaved:
    page_size: int

    def __post_init__(self):
        if not 0 < self.page_size <= MAX_PAGE_SIZE:
            raise InvalidPageSize(f"page size {self.page_size} outside (0, {MAX_PAGE_SIZE}]")
        if self.page_size % ALIGNMENT:
            raise InvalidPageSize(f"page size {self.page_size} is not a multiple of {ALIGNMENT}")


Placement = Union[SingleBank, Interleaved]


def align_down(address: int, alignment: int = ALIGNMENT) -> int:
    return address - (address % alignment)


def align_up(n: int, alignment: int = ALIGNMENT) -> int:
    return -(-n // alignment) * alignment


@dataclass(eq=False)
class DramBuffer:
    id: int
    placement: Placement
    length: int
    base_address: int
    bank_count: int
    base_page: int = 0
    data: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        self.interleaved = isinstance(self.placement, Interleaved)
        self.page_size = self.placement.page_size if self.interleaved else None
        self.end_address = self.base_address + self.length

    def check_range(self, address: int, length: int):
        if length < 0 or address < self.base_address or address + length > self.end_address:
            raise OutOfBounds(
                f"[{address:#x}, {address + length:#x}) outside buffer {self.id} "
                f"[{self.base_address:#x}, {self.end_address:#x})"
            )

    def bank_of(self, address: int) -> int:
        if not self.interleaved:
            return self.placement.bank
        page = (address - self.base_address) // self.placement.page_size
        return (self.base_page + page) % self.bank_count

    def segments(self, address: int, length: int):
        """Split ``[address, address+length)`` into per-bank pieces.

        Returns ``(bank, address, length)`` tuples; a single-bank buffer always
        yields one piece, an interleaved buffer one piece per page touched.
        """
        if not self.interleaved:
            return [(self.placement.bank, address, length)]
        page = self.placement.page_size
        out = []
        a, end = address, address + length
        while a < end:
            page_end = self.base_address + ((a - self.base_address) // page + 1) * page
            n = min(end, page_end) - a
            out.append((self.bank_of(a), a, n))
            a += n
        return out

    def bank_local(self, address: int) -> tuple[int, int]:
        """Map a buffer address to ``(bank, address within that bank)``."""
        if not self.interleaved:
            return self.placement.bank, address
        page = self.placement.page_size
        idx, within = divmod(address - self.base_address, page)
        slot = (self.base_page + idx) // self.bank_count
        return self.bank_of(address), self.base_address + slot * page + within


class Dram:
    """Device DRAM: allocator plus the fault-modelled raw access path."""

    def __init__(self, config: Optional[DramConfig] = None):
        self.config = config or DramConfig()
        self._next_free = [0] * self.config.bank_count
        self._ids = itertools.count()
        self._interleaved_pages = 0
        self.buffers: list[DramBuffer] = []

    @property
    def bank_count(self) -> int:
        return self.config.bank_count

    def allocate(self, placement: Placement, length: int) -> DramBuffer:
        if length <= 0:
            raise DramError("allocation length must be positive")
        cfg = self.config
        if isinstance(placement, SingleBank):
            if not 0 <= placement.bank < cfg.bank_count:
                raise DramError(f"no bank {placement.bank}")
            base = align_up(self._next_free[placement.bank], cfg.alignment)
            if base + length > cfg.bank_size:
                raise OutOfMemory(f"bank {placement.bank} cannot fit {length} bytes")
            self._next_free[placement.bank] = base + length
            base_page = 0
        else:
            n_pages = -(-length // placement.page_size)
            per_bank = -(-n_pages // cfg.bank_count) * placement.page_size
            base = align_up(max(self._next_free), cfg.alignment)
            if base + per_bank > cfg.bank_size:
                raise OutOfMemory(f"interleaved buffer of {length} bytes does not fit")
            self._next_free = [base + per_bank] * cfg.bank_count
            base_page = self._interleaved_pages % cfg.bank_count
            self._interleaved_pages += n_pages
        buf = DramBuffer(
            id=next(self._ids),
            placement=placement,
            length=length,
            base_address=base,
            bank_count=cfg.bank_count,
            base_page=base_page,
            data=np.zeros(length, dtype=np.uint8),
        )
        self.buffers.append(buf)
        return buf

    def resolve(self, bank: int, local_address: int) -> tuple[DramBuffer, int]:
        """Find the buffer (and buffer address) behind a bank-local address."""
        for buf in self.buffers:
            if not buf.interleaved:
                if buf.placement.bank == bank and buf.base_address <= local_address < buf.end_address:
                    return buf, local_address
                continue
            page = buf.placement.page_size
            if local_address < buf.base_address:
                continue
            slot, within = divmod(local_address - buf.base_address, page)
            # page index p satisfies (base_page + p) // banks == slot and
            # (base_page + p) % banks == bank
            p = slot * buf.bank_count + bank - buf.base_page
            if p < 0:
                continue
            address = buf.base_address + p * page + within
            if address < buf.end_address:
                return buf, address
        raise OutOfBounds(f"bank {bank} address {local_address:#x} is not allocated")

    def _fault(self, kind: FaultKind, address: int) -> Optional[AccessFault]:
        if address % self.config.alignment == 0:
            return None
        return AccessFault(kind, address, align_down(address, self.config.alignment))

    def raw_read(self, buffer: DramBuffer, address: int, length: int):
        """Return ``(bytes as uint8 array, fault or None)``."""
        buffer.check_range(address, length)
        fault = self._fault(FaultKind.UNALIGNED_READ, address)
        start = (fault.effective_address if fault else address) - buffer.base_address
        return buffer.data[start:start + length].copy(), fault

    def raw_write(self, buffer: DramBuffer, address: int, data) -> Optional[AccessFault]:
        payload = np.frombuffer(bytes(data), dtype=np.uint8) if not isinstance(data, np.ndarray) else data.view(np.uint8).reshape(-1)
        buffer.check_range(address, payload.size)
        fault = self._fault(FaultKind.UNALIGNED_WRITE, address)
        if fault and self.config.write_mode is WriteMode.STRICT:
            raise UnalignedWrite(fault)
        start = (fault.effective_address if fault else address) - buffer.base_address
        buffer.data[start:start + payload.size] = payload
        return fault

    # host-side access, never faults

    def host_write(self, buffer: DramBuffer, offset: int, data) -> None:
        payload = np.asarray(data).view(np.uint8).reshape(-1)
        buffer.check_range(buffer.base_address + offset, payload.size)
        buffer.data[offset:offset + payload.size] = payload

    def host_read(self, buffer: DramBuffer, offset: int = 0, length: Optional[int] = None) -> np.ndarray:
        length = buffer.length - offset if length is None else length
        buffer.check_range(buffer.base_address + offset, length)
        return buffer.data[offset:offset + length].copy()

    def export_buffer(self, buffer: DramBuffer, path) -> None:
        Path(path).write_bytes(buffer.data.tobytes())

    def import_buffer(self, buffer: DramBuffer, path) -> None:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size != buffer.length:
            raise DramError(f"{path}: {raw.size} bytes, buffer holds {buffer.length}")
        buffer.data[:] = raw
