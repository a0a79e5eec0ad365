"""Asynchronous NoC transactions between core SRAM and DRAM banks.

Each core owns two NoC engines: reads go out on NoC 0 and writes on NoC 1.
An engine serves its requests in FIFO order. A request

* costs the issuing task its issue overhead,
* occupies its engine for issue + bytes * per-byte cost,
* occupies the DRAM bank(s) it touches, which every core shares,
* completes once engine and bank are both done, plus the completion latency.

Read payloads are captured at issue and become visible in SRAM when the
issuing core's read barrier returns. Write payloads are captured at issue and
land in DRAM at the write barrier, where deferred Strict-mode faults surface.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .cost import CostParams
from .dram import AccessFault, Dram, DramBuffer, FaultKind, OutOfBounds, UnalignedWrite, WriteMode

SRAM_SIZE = 1 << 20

READ_NOC = 0
WRITE_NOC = 1


class NocError(Exception):
    pass


class UnknownCoordinate(NocError):
    pass


class OutOfBoundsSRAM(NocError):
    pass


def dram_bank_coords(bank_count: int) -> list[tuple[int, int]]:
    """NoC coordinates of the DRAM controllers (two per column)."""
    return [(1 + 3 * (b // 2), 6 * (b % 2)) for b in range(bank_count)]


@dataclass(frozen=True)
class NocAddress:
    noc_x: int
    noc_y: int
    local_address: int


@dataclass
class _Engine:
    free_at: float = 0.0
    last_end: Optional[tuple[int, int]] = None


class BankCalendar:
    """Busy time of one DRAM bank, bookkept per fixed window of virtual time.

    A request at ``t`` fills its window from ``t`` on (idle time before ``t``
    is lost) and spills into later windows; it completes where its last piece
    ends. Requests arriving in time order are served exactly FIFO. A request
    that arrives late in host order but early in virtual time only competes
    with work already booked in the windows it touches, so a task running
    ahead of the others cannot push lagging tasks behind its whole backlog.
    """

    __slots__ = ("used",)
    WINDOW = 256.0

    def __init__(self):
        self.used: dict[int, float] = {}

    def reserve(self, t: float, d: float) -> float:
        """Book ``d`` ns at or after ``t``; returns the completion time."""
        w = self.WINDOW
        used = self.used
        i = int(t // w)
        u = used.get(i, 0.0)
        floor = t - i * w
        if u < floor:
            u = floor
        while d > w - u:
            d -= w - u
            used[i] = w
            i += 1
            u = used.get(i, 0.0)
        u += d
        used[i] = u
        return i * w + u

    def prune(self, before: float) -> None:
        """Forget windows wholly before ``before``; no request can arrive earlier."""
        cut = int(before // self.WINDOW)
        for k in [k for k in self.used if k < cut]:
            del self.used[k]


@dataclass
class Transaction:
    kind: str
    core: int
    buffer: DramBuffer
    address: int
    length: int
    local_address: int
    issue_time: float
    completion: float
    payload: np.ndarray = field(repr=False, default=None)
    fault: Optional[AccessFault] = None


@dataclass
class FaultRecord:
    virtual_time: float
    core: int
    kind: str
    requested_address: int
    effective_address: int


class NocEngine:
    def __init__(self, dram: Dram, params: CostParams):
        self.dram = dram
        self.params = params
        self.bank_coords = dram_bank_coords(dram.bank_count)
        self._coord_bank = {c: b for b, c in enumerate(self.bank_coords)}
        self.core_coords: dict[tuple[int, int], int] = {}
        self._engines: dict[tuple[int, int], _Engine] = {}
        self.banks = [BankCalendar() for _ in range(dram.bank_count)]
        self.horizon = 0.0  # no task clock is below this; set by the scheduler
        self._issued = 0
        self.pending: dict[tuple[int, str], list[Transaction]] = {}
        self.faults: list[FaultRecord] = []
        self._cost_cache = None
        self._factors: dict[int, float] = {}
        self.counts = {"reads": 0, "writes": 0, "read_bytes": 0, "write_bytes": 0}

    # -- addressing --

    def get_noc_addr(self, noc_x: int, noc_y: int, offset: int) -> NocAddress:
        if (noc_x, noc_y) not in self._coord_bank and (noc_x, noc_y) not in self.core_coords:
            raise UnknownCoordinate(f"nothing at NoC ({noc_x}, {noc_y})")
        return NocAddress(noc_x, noc_y, offset)

    def bank_noc_addr(self, bank: int, offset: int) -> NocAddress:
        x, y = self.bank_coords[bank]
        return NocAddress(x, y, offset)

    def resolve(self, addr: NocAddress) -> tuple[DramBuffer, int]:
        bank = self._coord_bank.get((addr.noc_x, addr.noc_y))
        if bank is None:
            raise NocError(f"({addr.noc_x}, {addr.noc_y}) is not a DRAM bank; core-to-core transfers are not modelled")
        return self.dram.resolve(bank, addr.local_address)

    # -- timing --

    def _engine(self, core: int, noc: int) -> _Engine:
        eng = self._engines.get((core, noc))
        if eng is None:
            eng = self._engines[(core, noc)] = _Engine()
        return eng

    def _costs(self):
        """Per-kind constants, derived once; parameters are fixed for a run."""
        if self._cost_cache is None:
            p = self.params
            self._cost_cache = {
                kind: (p.req_ns(kind), p.byte_ns(kind), p.latency_ns(kind, False), p.latency_ns(kind, True))
                for kind in ("read", "write")
            }
        return self._cost_cache

    def _page_factor(self, page: int) -> float:
        f = self._factors.get(page)
        if f is None:
            f = self._factors[page] = self.params.page_factor(page)
        return f

    def _schedule(self, kind: str, core: int, now: float, buffer: DramBuffer, address: int,
                  length: int, timed: bool) -> tuple[float, float]:
        """Return ``(issuer time after issuing, completion time)``."""
        if not timed:
            return now, now
        p = self.params
        req, per_byte, lat, lat_interleaved = self._costs()[kind]
        eng = self._engine(core, READ_NOC if kind == "read" else WRITE_NOC)
        contiguous = eng.last_end == (buffer.id, address)
        eng.last_end = (buffer.id, address + length)
        page = buffer.page_size
        issue = req if contiguous else req + p.noncontig_req_ns
        if page is not None:
            issue += p.page_req_ns
            per_byte *= self._page_factor(page)
        start = now if now > eng.free_at else eng.free_at
        done = eng.free_at = start + issue + length * per_byte
        banks = self.banks
        for bank, _, n in buffer.segments(address, length):
            b = banks[bank].reserve(now, p.bank_ns(n))
            if b > done:
                done = b
        self._tick_prune()
        return now + issue, done + (lat if page is None else lat_interleaved)

    def _tick_prune(self) -> None:
        self._issued += 1
        if self._issued % 256 == 0:
            for b in self.banks:
                b.prune(self.horizon)

    @staticmethod
    def _check_sram(local_address: int, length: int):
        if local_address < 0 or length < 0 or local_address + length > SRAM_SIZE:
            raise OutOfBoundsSRAM(f"SRAM range [{local_address:#x}, {local_address + length:#x}) out of bounds")

    # -- transactions --

    def issue_read(self, core: int, now: float, buffer: DramBuffer, address: int,
                   local_address: int, length: int, timed: bool = True) -> float:
        self._check_sram(local_address, length)
        data, fault = self.dram.raw_read(buffer, address, length)
        t, done = self._schedule("read", core, now, buffer, address, length, timed)
        if fault:
            self.faults.append(FaultRecord(now, core, fault.kind.value,
                                           fault.requested_address, fault.effective_address))
        self.pending.setdefault((core, "read"), []).append(
            Transaction("read", core, buffer, address, length, local_address, now, done, data, fault))
        self.counts["reads"] += 1
        self.counts["read_bytes"] += length
        return t

    def issue_write(self, core: int, now: float, sram: np.ndarray, local_address: int,
                    buffer: DramBuffer, address: int, length: int, timed: bool = True) -> float:
        self._check_sram(local_address, length)
        buffer.check_range(address, length)
        payload = sram[local_address:local_address + length].copy()
        t, done = self._schedule("write", core, now, buffer, address, length, timed)
        self.pending.setdefault((core, "write"), []).append(
            Transaction("write", core, buffer, address, length, local_address, now, done, payload))
        self.counts["writes"] += 1
        self.counts["write_bytes"] += length
        return t

    # -- row groups: one request per row, bookkept as a single entry --

    def _check_rows(self, buffer: DramBuffer, addresses: np.ndarray, local: np.ndarray, length: int):
        if local.min() < 0 or local.max() + length > SRAM_SIZE or length < 0:
            raise OutOfBoundsSRAM("SRAM row range out of bounds")
        buffer.check_range(int(addresses.min()), 0)
        buffer.check_range(int(addresses.max()), length)

    def _schedule_rows(self, kind: str, core: int, now: float, buffer: DramBuffer,
                       addresses: np.ndarray, length: int, timed: bool):
        if timed and not buffer.interleaved:
            return self._schedule_rows_single(kind, core, now, buffer, addresses, length)
        times, done = [], now
        for a in addresses.tolist():
            segs = buffer.segments(a, length) if buffer.interleaved else ((None, a, length),)
            times.append(now)
            for _, sa, n in segs:
                now, d = self._schedule(kind, core, now, buffer, sa, n, timed)
                if d > done:
                    done = d
                self.counts[kind + "s"] += 1
        self.counts[kind + "_bytes"] += length * len(times)
        return now, done, times

    def _schedule_rows_single(self, kind: str, core: int, now: float, buffer: DramBuffer,
                              addresses: np.ndarray, length: int):
        """Row burst on a single-bank buffer, evaluated in closed form.

        Engine timing matches a loop of single requests. The bank is booked
        once for the whole burst starting at the first issue.
        """
        p = self.params
        req, per_byte, lat, _ = self._costs()[kind]
        eng = self._engine(core, READ_NOC if kind == "read" else WRITE_NOC)
        n = len(addresses)
        if n == 0:
            return now, now, []
        stream = length * per_byte
        noncontig = req + p.noncontig_req_ns
        last = eng.last_end
        bid = buffer.id
        addr = np.asarray(addresses, dtype=np.int64)
        prev0 = last[1] if last is not None and last[0] == bid else -1
        contig = np.empty(n, dtype=bool)
        contig[0] = addr[0] == prev0
        if n > 1:
            contig[1:] = addr[1:] == addr[:-1] + length
        n_contig = int(np.count_nonzero(contig))
        issues = np.where(contig, req, noncontig)
        steps = np.empty(n)
        steps[0] = 0.0
        np.cumsum(issues[:-1], out=steps[1:])
        times = (now + steps).tolist()
        busy = n_contig * req + (n - n_contig) * noncontig
        start = now if now > eng.free_at else eng.free_at
        free = start + busy + n * stream
        b = self.banks[buffer.placement.bank].reserve(now, n * p.bank_ns(length))
        done = (free if free > b else b) + lat
        eng.free_at, eng.last_end = free, (bid, int(addr[-1]) + length)
        self._tick_prune()
        self.counts[kind + "s"] += n
        self.counts[kind + "_bytes"] += length * n
        return now + busy, done, times

    def _log_row_faults(self, core: int, kind: str, times, addresses: np.ndarray, effective: np.ndarray):
        for i in np.flatnonzero(addresses != effective).tolist():
            self.faults.append(FaultRecord(times[i], core, kind, int(addresses[i]), int(effective[i])))

    def issue_read_rows(self, core: int, now: float, buffer: DramBuffer, addresses, local_addresses,
                        length: int, timed: bool = True) -> float:
        """Same requests, data and faults as one ``issue_read`` per row in order."""
        addresses = np.asarray(addresses, dtype=np.int64)
        local = np.asarray(local_addresses, dtype=np.int64)
        if addresses.size == 0:
            return now
        self._check_rows(buffer, addresses, local, length)
        effective = addresses - addresses % self.dram.config.alignment
        data = buffer.data[(effective - buffer.base_address)[:, None] + np.arange(length)]
        t, done, times = self._schedule_rows("read", core, now, buffer, addresses, length, timed)
        self._log_row_faults(core, FaultKind.UNALIGNED_READ.value, times, addresses, effective)
        self.pending.setdefault((core, "read"), []).append(
            Transaction("read", core, buffer, addresses, length, local, now, done, data))
        return t

    def issue_write_rows(self, core: int, now: float, sram: np.ndarray, local_addresses,
                         buffer: DramBuffer, addresses, length: int, timed: bool = True) -> float:
        """Same requests and final memory as one ``issue_write`` per row in order."""
        addresses = np.asarray(addresses, dtype=np.int64)
        local = np.asarray(local_addresses, dtype=np.int64)
        if addresses.size == 0:
            return now
        self._check_rows(buffer, addresses, local, length)
        payload = sram[local[:, None] + np.arange(length)]
        t, done, _ = self._schedule_rows("write", core, now, buffer, addresses, length, timed)
        self.pending.setdefault((core, "write"), []).append(
            Transaction("write", core, buffer, addresses, length, local, now, done, payload))
        return t

    def _retire_write_rows(self, core: int, t: Transaction, now: float):
        a = t.address
        effective = a - a % self.dram.config.alignment
        bad = np.flatnonzero(a != effective)
        cols = np.arange(t.length)
        data = t.buffer.data
        if bad.size and self.dram.config.write_mode is WriteMode.STRICT:
            i = int(bad[0])
            data[(a[:i] - t.buffer.base_address)[:, None] + cols] = t.payload[:i]
            raise UnalignedWrite(AccessFault(FaultKind.UNALIGNED_WRITE, int(a[i]), int(effective[i])))
        data[(effective - t.buffer.base_address)[:, None] + cols] = t.payload
        self._log_row_faults(core, FaultKind.UNALIGNED_WRITE.value, [now] * a.size, a, effective)

    def completion(self, core: int, kind: str) -> float:
        txns = self.pending.get((core, kind))
        return max((t.completion for t in txns), default=0.0) if txns else 0.0

    def retire(self, core: int, kind: str, sram: np.ndarray, now: float) -> None:
        """Make every pending transaction of ``kind`` visible (barrier body)."""
        txns = self.pending.pop((core, kind), None)
        if not txns:
            return
        if kind == "read":
            for t in txns:
                if isinstance(t.local_address, np.ndarray):
                    sram[t.local_address[:, None] + np.arange(t.length)] = t.payload
                else:
                    sram[t.local_address:t.local_address + t.length] = t.payload
            return
        for t in txns:
            if isinstance(t.address, np.ndarray):
                self._retire_write_rows(core, t, now)
                continue
            fault = self.dram.raw_write(t.buffer, t.address, t.payload)
            if fault:
                self.faults.append(FaultRecord(now, core, fault.kind.value,
                                               fault.requested_address, fault.effective_address))

    def export_faults(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["virtual_time", "core", "kind", "requested_address", "effective_address"])
            for f in self.faults:
                w.writerow([f"{f.virtual_time:.3f}", f.core, f.kind, f.requested_address, f.effective_address])


__all__ = [
    "NocAddress", "NocEngine", "NocError", "OutOfBounds", "OutOfBoundsSRAM",
    "UnknownCoordinate", "SRAM_SIZE", "Transaction", "FaultRecord",
]
