"""Kernel execution model: cooperative kernel tasks over a discrete-event clock.

Every kernel is a generator function ``kernel(ctx, *args)`` and every task
carries its own virtual clock. Device calls advance the caller's clock by
their cost. Calls that can block (circular-buffer reserve/wait, barriers,
semaphores) are generators used with ``yield from``.

Circular-buffer pages are stamped with the time they were pushed or popped,
so a task never has to wait for slower tasks to catch up before touching a
CB: it proceeds at the later of its own clock and the stamp. Semaphores are
scheduling points: a task touching one first lets every task with an earlier
clock run. The scheduler resumes the task with the smallest clock; when no
task can run and some have not finished, the run is deadlocked.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Optional

import numpy as np

from .cb import CBError, CircularBuffer, WaitQueue
from .cost import CostParams, default_params, energy
from .dram import Dram, DramBuffer, align_up
from .noc import SRAM_SIZE, NocAddress, NocEngine, OutOfBoundsSRAM
from .numerics import TILE_BYTES, NumericsError, TileRegisterFile, add_raw, mul_raw

ROLES = ("reader", "writer", "compute")


class SimError(Exception):
    pass


class Deadlock(SimError):
    def __init__(self, virtual_time: float, blocked: dict[str, str]):
        lines = ", ".join(f"{k} on {v}" for k, v in sorted(blocked.items()))
        super().__init__(f"deadlock at t={virtual_time:.1f} ns: {lines}")
        self.virtual_time = virtual_time
        self.blocked = blocked


class KernelFault(SimError):
    def __init__(self, task_name: str, cause: BaseException):
        super().__init__(f"{task_name}: {type(cause).__name__}: {cause}")
        self.task_name = task_name
        self.cause = cause


@dataclass
class CoreGrid:
    cols: int = 12
    rows: int = 10
    worker_cores: int = 108
    clock_ghz: float = 1.2

    def __post_init__(self):
        if self.worker_cores > self.cols * self.rows:
            raise ValueError("more workers than cores")

    @property
    def total_cores(self) -> int:
        return self.cols * self.rows

    def coord(self, index: int) -> tuple[int, int]:
        """Logical worker index -> NoC coordinate (rows 0 and 6 hold DRAM)."""
        if not 0 <= index < self.worker_cores:
            raise ValueError(f"worker {index} outside 0..{self.worker_cores - 1}")
        per_row = self.cols
        r, c = divmod(index, per_row)
        y = r + 1 if r < 5 else r + 2
        return c + 1, y


@dataclass
class Ablation:
    """Phases whose virtual-time cost is zeroed; data still flows."""

    read: bool = True
    memcpy: bool = True
    compute: bool = True
    write: bool = True

    @classmethod
    def from_flags(cls, flags: str) -> "Ablation":
        """``"YNYN"`` style, in read/memcpy/compute/write order."""
        flags = flags.strip().upper()
        if len(flags) != 4 or set(flags) - {"Y", "N"}:
            raise ValueError(f"ablation flags must be 4 of Y/N, got {flags!r}")
        return cls(*(f == "Y" for f in flags))

    def flags(self) -> str:
        return "".join("Y" if x else "N" for x in (self.read, self.memcpy, self.compute, self.write))


class Semaphore:
    def __init__(self, name: str, value: int = 0):
        self.name = name
        self.value = value
        self.waiters = WaitQueue(f"sem:{name}")


class Task:
    __slots__ = ("name", "core", "role", "gen", "time", "done", "blocked_on", "stall_ns")

    def __init__(self, name, core, role, gen):
        self.name = name
        self.core = core
        self.role = role
        self.gen = gen
        self.time = 0.0
        self.done = False
        self.blocked_on: Optional[str] = None
        self.stall_ns = 0.0


class Core:
    def __init__(self, sim: "Simulator", index: int, coord: tuple[int, int]):
        self.sim = sim
        self.index = index
        self.coord = coord
        self.sram = np.zeros(SRAM_SIZE, dtype=np.uint8)
        self._sram_top = 0
        self.cbs: dict[int, CircularBuffer] = {}
        self.semaphores: dict[str, Semaphore] = {}
        self.regs = TileRegisterFile()

    def sram_alloc(self, nbytes: int, align: int = 32) -> int:
        base = align_up(self._sram_top, align)
        if base + nbytes > SRAM_SIZE:
            raise OutOfBoundsSRAM(f"core {self.index}: SRAM exhausted allocating {nbytes} bytes")
        self._sram_top = base + nbytes
        return base

    def create_cb(self, cb_id: int, page_size: int, page_count: int = 4,
                  producer: str = "reader", consumer: str = "compute") -> CircularBuffer:
        if cb_id in self.cbs:
            raise CBError(f"cb{cb_id} already exists on core {self.index}")
        base = self.sram_alloc(page_size * page_count)
        cb = CircularBuffer(cb_id, base, page_size, page_count, producer, consumer)
        self.cbs[cb_id] = cb
        return cb

    def semaphore(self, name: str, value: int = 0) -> Semaphore:
        sem = self.semaphores.get(name)
        if sem is None:
            sem = self.semaphores[name] = Semaphore(f"core{self.index}.{name}", value)
        return sem


class KernelContext:
    """The device API one kernel task sees."""

    def __init__(self, sim: "Simulator", core: Core, task: Task):
        self.sim = sim
        self.core = core
        self.task = task
        self.role = task.role
        self.params = sim.params
        self.noc = sim.noc
        self.ablation = sim.ablation
        self.compile_args: dict = {}

    @property
    def now(self) -> float:
        return self.task.time

    def _charge(self, ns: float, counter: Optional[str] = None):
        self.task.time += ns
        if counter:
            self.sim.counters[counter] = self.sim.counters.get(counter, 0) + 1

    def _sync(self):
        """Scheduling point: let earlier tasks act first."""
        if self.sim.behind(self.task.time):
            yield None

    def _block_until(self, ready: Callable[[], bool], queue: WaitQueue):
        if self.sim.behind(self.task.time):
            yield None
        while not ready():
            yield queue
        self.task.blocked_on = None

    def batch_tick(self):
        self._charge(self.params.batch_overhead_ns)

    # -- circular buffers --

    def cb(self, cb_id: int) -> CircularBuffer:
        try:
            return self.core.cbs[cb_id]
        except KeyError:
            raise CBError(f"core {self.core.index} has no cb{cb_id}") from None

    # CB operations are not scheduling points. Every push and pop is stamped
    # with the virtual time it happened at, so a task that finds its pages
    # ready proceeds at max(own time, time they became ready), which is what
    # a time-ordered execution would give. Tasks only switch when blocked.

    def _arrive(self, t: float) -> None:
        task = self.task
        if t > task.time:
            task.stall_ns += t - task.time
            task.time = t

    def cb_reserve_back(self, cb_id: int, n: int = 1):
        cb = self.cb(cb_id)
        if not 0 < n <= cb.page_count:
            cb._check_n(n)
        while cb.page_count - cb.pushed + cb.popped < n:
            yield cb.back_waiters
        self.task.blocked_on = None
        self._arrive(cb.reserve_ready(n))
        return cb.reserve(self.role, n)

    def cb_push_back(self, cb_id: int, n: int = 1):
        cb = self.cb(cb_id)
        cb.push(self.role, n, self.task.time)
        if cb.front_waiters.tasks:
            self.sim.wake(cb.front_waiters, self.task.time)
        return
        yield

    def cb_wait_front(self, cb_id: int, n: int = 1):
        cb = self.cb(cb_id)
        if not 0 < n <= cb.page_count:
            cb._check_n(n)
        while cb.pushed - cb.popped < n:
            yield cb.front_waiters
        self.task.blocked_on = None
        self._arrive(cb.wait_ready(n))
        return cb.wait(self.role, n)

    def cb_pop_front(self, cb_id: int, n: int = 1):
        cb = self.cb(cb_id)
        cb.pop(self.role, n, self.task.time)
        if cb.back_waiters.tasks:
            self.sim.wake(cb.back_waiters, self.task.time)
        return
        yield

    def cb_set_rd_ptr(self, cb_id: int, address: int) -> None:
        if not 0 <= address < SRAM_SIZE:
            raise OutOfBoundsSRAM(f"rd_ptr {address:#x} outside SRAM")
        self.cb(cb_id).set_rd_ptr(self.role, address)

    def cb_read_address(self, cb_id: int, index: int = 0) -> int:
        return self.cb(cb_id).read_address(self.role, index)

    def cb_write_address(self, cb_id: int, index: int = 0) -> int:
        return self.cb(cb_id).write_address(self.role, index)

    # -- NoC --

    def get_noc_addr(self, noc_x: int, noc_y: int, offset: int) -> NocAddress:
        return self.noc.get_noc_addr(noc_x, noc_y, offset)

    def noc_async_read(self, addr: NocAddress, local_address: int, length: int) -> None:
        buf, address = self.noc.resolve(addr)
        self.noc_async_read_buffer(buf, address, local_address, length)

    def noc_async_read_buffer(self, buffer: DramBuffer, address: int, local_address: int, length: int) -> None:
        """Read ``length`` bytes at ``address``; interleaved buffers split per page."""
        timed = self.ablation.read
        dst = local_address
        for _, a, n in buffer.segments(address, length):
            self.task.time = self.noc.issue_read(self.core.index, self.task.time, buffer, a, dst, n, timed)
            dst += n

    def noc_async_write(self, local_address: int, addr: NocAddress, length: int) -> None:
        buf, address = self.noc.resolve(addr)
        self.noc_async_write_buffer(local_address, buf, address, length)

    def noc_async_write_buffer(self, local_address: int, buffer: DramBuffer, address: int, length: int) -> None:
        timed = self.ablation.write
        src = local_address
        for _, a, n in buffer.segments(address, length):
            self.task.time = self.noc.issue_write(self.core.index, self.task.time, self.core.sram,
                                                  src, buffer, a, n, timed)
            src += n

    def noc_async_read_rows(self, buffer: DramBuffer, addresses, local_addresses, lengths) -> None:
        """One read per row; identical in effect and cost to a loop of single reads."""
        addresses = np.asarray(addresses, dtype=np.int64)
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), addresses.shape)
        if addresses.size and lengths.min() == lengths.max():
            self.task.time = self.noc.issue_read_rows(self.core.index, self.task.time, buffer, addresses,
                                                      local_addresses, int(lengths[0]), self.ablation.read)
            return
        for a, dst, n in zip(addresses.tolist(), np.asarray(local_addresses).tolist(), lengths.tolist()):
            self.noc_async_read_buffer(buffer, a, dst, n)

    def noc_async_write_rows(self, local_addresses, buffer: DramBuffer, addresses, length: int) -> None:
        """One ``length``-byte write per row; identical to a loop of single writes."""
        self.task.time = self.noc.issue_write_rows(self.core.index, self.task.time, self.core.sram,
                                                   local_addresses, buffer, addresses, length,
                                                   self.ablation.write)

    def noc_async_read_barrier(self):
        yield from self._barrier("read")

    def noc_async_write_barrier(self):
        yield from self._barrier("write")

    def _barrier(self, kind: str):
        done = self.noc.completion(self.core.index, kind)
        self._arrive(done)
        # let lagging tasks catch up so DRAM banks mostly see requests in
        # time order; correctness does not depend on it
        if self.sim.behind(self.task.time):
            yield None
        self.noc.retire(self.core.index, kind, self.core.sram, self.task.time)

    # -- local memory --

    def memcpy(self, dst: int, src: int, nbytes: int, calls: int = 1) -> None:
        sram = self.core.sram
        if min(dst, src) < 0 or max(dst, src) + nbytes > SRAM_SIZE:
            raise OutOfBoundsSRAM("memcpy outside SRAM")
        sram[dst:dst + nbytes] = sram[src:src + nbytes]
        self.charge_memcpy(nbytes, calls)

    def charge_memcpy(self, nbytes: int, calls: int = 1) -> None:
        """Account for copies whose data movement the caller did itself."""
        self.sim.counters["memcpy"] = self.sim.counters.get("memcpy", 0) + calls
        self.sim.counters["memcpy_bytes"] = self.sim.counters.get("memcpy_bytes", 0) + nbytes
        if self.ablation.memcpy:
            self.task.time += self.params.memcpy_ns(nbytes, calls)

    def sram_view(self, address: int, nbytes: int) -> np.ndarray:
        return self.core.sram[address:address + nbytes]

    def sram_u16(self, address: int, count: int) -> np.ndarray:
        """BF16 elements at a 2-byte aligned SRAM address (a copy)."""
        raw = self.core.sram[address:address + 2 * count]
        return raw.view("<u2").copy() if address % 2 == 0 else np.frombuffer(raw.tobytes(), "<u2").copy()

    # -- tile registers and FPU --

    def acquire_dst(self) -> None:
        self.core.regs.acquire()

    def release_dst(self) -> None:
        self.core.regs.release()

    def _tile_from_cb(self, cb_id: int, index: int) -> np.ndarray:
        cb = self.cb(cb_id)
        if cb.pushed - cb.popped < index + 1:
            raise CBError(f"cb{cb_id}: tile {index} read without a committed page")
        addr = cb.read_address(self.role, index)
        if addr + TILE_BYTES > SRAM_SIZE:
            raise OutOfBoundsSRAM(f"cb{cb_id}: tile at {addr:#x} runs past the end of SRAM")
        if addr % 2:
            return self.sram_u16(addr, TILE_BYTES // 2)
        return self.core.sram[addr:addr + TILE_BYTES].view("<u2")

    def _tile_op(self, op, cb_a, cb_b, idx_a, idx_b, dst):
        a = self._tile_from_cb(cb_a, idx_a)
        b = self._tile_from_cb(cb_b, idx_b)
        self.core.regs.write(dst, op(a, b))
        self.sim.tile_ops += 1
        if self.ablation.compute:
            self.task.time += self.params.tileop_ns

    def add_tiles(self, cb_a: int, cb_b: int, idx_a: int, idx_b: int, dst: int) -> None:
        self._tile_op(add_raw, cb_a, cb_b, idx_a, idx_b, dst)

    def mul_tiles(self, cb_a: int, cb_b: int, idx_a: int, idx_b: int, dst: int) -> None:
        self._tile_op(mul_raw, cb_a, cb_b, idx_a, idx_b, dst)

    def pack_tile(self, dst: int, cb_id: int) -> None:
        cb = self.cb(cb_id)
        v = cb.view(self.role)
        if v.reserved <= v.packed:
            raise CBError(f"NoReservedPage: cb{cb_id} has no reserved page to pack into")
        bits = self.core.regs.read(dst)
        addr = cb.write_address(self.role, v.packed)
        self.core.sram[addr:addr + TILE_BYTES] = bits.view(np.uint8)
        v.packed += 1

    # -- semaphores --

    def sem_wait(self, sem: Semaphore, target: int):
        yield from self._block_until(lambda: sem.value >= target, sem.waiters)

    def sem_set(self, sem: Semaphore, value: int):
        if self.sim.behind(self.task.time):
            yield None
        sem.value = value
        self.sim.wake(sem.waiters, self.task.time)

    def sem_inc(self, sem: Semaphore, delta: int = 1):
        if self.sim.behind(self.task.time):
            yield None
        sem.value += delta
        self.sim.wake(sem.waiters, self.task.time)


@dataclass
class RunReport:
    virtual_seconds: float
    energy_joules: float
    per_core: dict = field(default_factory=dict)
    transactions: dict = field(default_factory=dict)
    faults: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _finished():
    """Stand-in generator for a kernel that did all its work without yielding."""
    return
    yield


class Simulator:
    def __init__(self, dram: Optional[Dram] = None, params: Optional[CostParams] = None,
                 grid: Optional[CoreGrid] = None, ablation: Optional[Ablation] = None,
                 time_limit_ns: Optional[float] = None):
        self.dram = dram or Dram()
        self.params = params or default_params()
        self.grid = grid or CoreGrid()
        self.ablation = ablation or Ablation()
        self.noc = NocEngine(self.dram, self.params)
        self.time_limit_ns = time_limit_ns
        self.cores: dict[int, Core] = {}
        self.tasks: list[Task] = []
        self.semaphores: dict[str, Semaphore] = {}
        self.counters: dict[str, int] = {}
        self.tile_ops = 0
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0.0

    def core(self, index: int) -> Core:
        c = self.cores.get(index)
        if c is None:
            coord = self.grid.coord(index)
            c = self.cores[index] = Core(self, index, coord)
            self.noc.core_coords[coord] = index
        return c

    def semaphore(self, name: str, value: int = 0) -> Semaphore:
        sem = self.semaphores.get(name)
        if sem is None:
            sem = self.semaphores[name] = Semaphore(name, value)
        return sem

    def behind(self, t: float) -> bool:
        """Whether another task must act before one at time ``t`` may touch
        shared state; on equal times the task queued first goes first."""
        heap = self._heap
        if heap and heap[0][0] <= t:
            return True
        return self.time_limit_ns is not None and t > self.time_limit_ns

    def spawn(self, core_index: int, role: str, kernel: Callable[..., Any], *args,
              compile_args: Optional[dict] = None) -> Task:
        core = self.core(core_index)
        task = Task(f"core{core_index}.{role}", core_index, role, None)
        ctx = KernelContext(self, core, task)
        ctx.compile_args = dict(compile_args or {})
        gen = kernel(ctx, *args)
        if gen is None or not hasattr(gen, "send"):
            gen = _finished()
        task.gen = gen
        self.tasks.append(task)
        self._push(task)
        return task

    def _push(self, task: Task):
        heapq.heappush(self._heap, (task.time, next(self._seq), task))

    def wake(self, queue: WaitQueue, at: float) -> None:
        tasks, queue.tasks = queue.tasks, []
        for t in tasks:
            if at > t.time:
                t.stall_ns += at - t.time
                t.time = at
            self._push(t)

    def run(self) -> RunReport:
        with np.errstate(all="ignore"):
            self._loop()
        unfinished = [k for k in self.tasks if not k.done]
        if unfinished:
            raise Deadlock(self.now, {k.name: k.blocked_on or "?" for k in unfinished})
        # flush writes a kernel left without a barrier
        for (core, kind) in list(self.noc.pending):
            if kind == "write":
                self.noc.retire(core, kind, self.cores[core].sram, self.now)
        return self.report()

    def _loop(self) -> None:
        heap = self._heap
        while heap:
            t, _, task = heapq.heappop(heap)
            self.now = self.noc.horizon = t
            if self.time_limit_ns is not None and t > self.time_limit_ns:
                raise Deadlock(t, {k.name: k.blocked_on or "running" for k in self.tasks if not k.done})
            send = task.gen.send
            while True:
                try:
                    cmd = send(None)
                except StopIteration:
                    task.done = True
                    break
                except SimError:
                    raise
                except Exception as exc:  # propagate device-side errors with context
                    raise KernelFault(task.name, exc) from exc
                if cmd is not None:
                    cmd.add(task)
                    break
                # keep running while this task is strictly the earliest one;
                # on a tie the heap order (earlier arrival first) decides
                if heap and task.time >= heap[0][0]:
                    self._push(task)
                    break
                if self.time_limit_ns is not None and task.time > self.time_limit_ns:
                    self._push(task)
                    break

    def report(self) -> RunReport:
        end_ns = max((t.time for t in self.tasks), default=0.0)
        end_ns = max(end_ns, max((self.noc.completion(c, k) for (c, k) in self.noc.pending), default=0.0))
        secs = end_ns * 1e-9
        per_core: dict = {}
        for t in self.tasks:
            d = per_core.setdefault(str(t.core), {})
            d[t.role] = {"busy_ns": round(t.time - t.stall_ns, 3), "stall_ns": round(t.stall_ns, 3)}
        tx = dict(self.noc.counts)
        tx.update(self.counters)
        if self.tile_ops:
            tx["tile_ops"] = self.tile_ops
        faults = [asdict(f) for f in self.noc.faults]
        return RunReport(secs, energy(self.params, secs), per_core, tx, faults)


@dataclass
class KernelProgram:
    """Reader, writer and compute kernels plus the per-core host setup.

    ``setup(core, args)`` runs on the host before launch (creating CBs, SRAM
    buffers, semaphores) and returns the argument tuple each kernel receives.
    """

    reader: Optional[Callable] = None
    writer: Optional[Callable] = None
    compute: Optional[Callable] = None
    setup: Optional[Callable] = None
    compile_args: dict = field(default_factory=dict)


def launch(program: KernelProgram, runtime_args: dict[int, Any], sim: Optional[Simulator] = None,
           **sim_kwargs) -> RunReport:
    """Run ``program`` on every core named in ``runtime_args``."""
    sim = sim or Simulator(**sim_kwargs)
    for core_index, args in sorted(runtime_args.items()):
        core = sim.core(core_index)
        kargs = program.setup(core, args) if program.setup else (args,)
        for role in ROLES:
            kernel = getattr(program, role)
            if kernel is not None:
                sim.spawn(core_index, role, kernel, *kargs, compile_args=program.compile_args)
    return sim.run()
