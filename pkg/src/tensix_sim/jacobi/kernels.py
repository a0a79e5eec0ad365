"""Device Jacobi kernels: the tiled initial kernel and the row-chunk optimized kernel.

Both kernels split each core's subdomain into batches, move data with the
reader data mover, run the stencil sum on the compute task and store results
with the writer data mover. Iteration ``k`` reads ``d1`` and writes ``d2``
when ``k`` is even, the other way round when odd. Before iteration ``k`` every
reader waits on a global semaphore that writers bump once they have flushed
their part of iteration ``k - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..cost import CostParams, gpt_per_s
from ..dram import Dram, DramBuffer, DramConfig, Placement, SingleBank, WriteMode, align_down, align_up
from ..numerics import TILE_BYTES, TILE_DIM, f32_to_bf16_bits
from ..tensix import Ablation, Core, CoreGrid, KernelContext, KernelProgram, RunReport, Semaphore, Simulator, launch
from .decompose import Subdomain, decompose
from .domain import Domain, parity_buffers, result_buffer

CB_W, CB_E, CB_N, CB_S = 0, 1, 2, 3
CB_SCALAR = 4
CB_INTER = 5
CB_OUT = 16
INPUT_CBS = (CB_W, CB_E, CB_N, CB_S)

HALO = TILE_DIM + 2          # 34 rows of 34 elements per tile batch
HALO_ROW_BYTES = 2 * HALO    # 68
HALO_SLOT = 128              # SRAM stride per halo row; room for a 30-byte alignment offset
CHUNK = 1024                 # optimized-kernel row chunk, one tile of elements
RING_SLOTS = 4
RING_SLOT_BYTES = align_up(2 * CHUNK + 64, 32)

ROW_STEPS = np.arange(TILE_DIM)
QUARTER_TILE = np.full(TILE_BYTES // 2, f32_to_bf16_bits(np.float32(0.25)), dtype="<u2")


def read_data_aligned(ctx: KernelContext, buffer: DramBuffer, address: int, starting_address: int,
                      size: int, local_address: int) -> int:
    """Issue one read that starts on an aligned address and covers
    ``[address, address + size)``. Returns the byte offset at which the
    requested data begins in SRAM once the read barrier has returned."""
    offset = (address - starting_address) % 32
    ctx.noc_async_read_buffer(buffer, address - offset, local_address, size + offset)
    return offset


@dataclass
class _Job:
    domain: Domain
    d1: DramBuffer
    d2: DramBuffer
    iterations: int
    sub: Subdomain
    sem: Semaphore
    n_active: int
    double_buffer: bool = True
    aligned_reads: bool = True
    write_sync: str = "batch"
    halo_bufs: list = field(default_factory=list)
    ring: int = 0


def _load_scalar(ctx: KernelContext):
    yield from ctx.cb_reserve_back(CB_SCALAR, 1)
    addr = ctx.cb_write_address(CB_SCALAR)
    ctx.core.sram[addr:addr + TILE_BYTES] = QUARTER_TILE.view(np.uint8)
    yield from ctx.cb_push_back(CB_SCALAR, 1)


def _wait_iteration(ctx: KernelContext, job: _Job, k: int):
    if k:
        yield from ctx.sem_wait(job.sem, k * job.n_active)


def _stencil(ctx: KernelContext, before_pop=None):
    """The four-op stencil sum of one batch into ``CB_OUT``.

    ``before_pop(cb)`` runs after ``cb_wait_front`` on each input CB and may
    redirect its read pointer.
    """
    ctx.acquire_dst()
    for cb in (CB_W, CB_E):
        yield from ctx.cb_wait_front(cb, 1)
        if before_pop:
            before_pop(cb)
    ctx.add_tiles(CB_W, CB_E, 0, 0, 0)
    yield from ctx.cb_pop_front(CB_E, 1)
    yield from ctx.cb_pop_front(CB_W, 1)
    for cb in (CB_N, CB_S):
        yield from ctx.cb_reserve_back(CB_INTER, 1)
        ctx.pack_tile(0, CB_INTER)
        yield from ctx.cb_push_back(CB_INTER, 1)
        yield from ctx.cb_wait_front(cb, 1)
        if before_pop:
            before_pop(cb)
        yield from ctx.cb_wait_front(CB_INTER, 1)
        ctx.add_tiles(cb, CB_INTER, 0, 0, 0)
        yield from ctx.cb_pop_front(CB_INTER, 1)
        yield from ctx.cb_pop_front(cb, 1)
    yield from ctx.cb_reserve_back(CB_INTER, 1)
    ctx.pack_tile(0, CB_INTER)
    yield from ctx.cb_push_back(CB_INTER, 1)
    yield from ctx.cb_wait_front(CB_INTER, 1)
    ctx.mul_tiles(CB_SCALAR, CB_INTER, 0, 0, 0)
    yield from ctx.cb_pop_front(CB_INTER, 1)
    yield from ctx.cb_reserve_back(CB_OUT, 1)
    ctx.pack_tile(0, CB_OUT)
    yield from ctx.cb_push_back(CB_OUT, 1)
    ctx.release_dst()


# -- initial kernel: 32x32 tiles --

def _tiles(sub: Subdomain) -> list[tuple[int, int]]:
    return [(ty, tx) for ty in range(sub.y0 // TILE_DIM, sub.y1 // TILE_DIM)
            for tx in range(sub.x0 // TILE_DIM, sub.x1 // TILE_DIM)]


def read_rows_aligned(ctx: KernelContext, buffer: DramBuffer, addresses, starting_address: int,
                      size: int, local_addresses) -> np.ndarray:
    """``read_data_aligned`` for a group of rows, issued in row order."""
    addresses = np.asarray(addresses, dtype=np.int64)
    offsets = (addresses - starting_address) % 32
    ctx.noc_async_read_rows(buffer, addresses - offsets, local_addresses, size + offsets)
    return offsets


def _halo_rows(job: _Job, src: DramBuffer, tile: tuple[int, int], buf: int) -> tuple[np.ndarray, np.ndarray]:
    ty, tx = tile
    rows = ty * TILE_DIM + np.arange(HALO)
    addresses = job.domain.address(src.base_address, 0, tx * TILE_DIM) + rows * job.domain.pitch_bytes
    return addresses, job.halo_bufs[buf] + np.arange(HALO) * HALO_SLOT


def _issue_halo(ctx: KernelContext, job: _Job, src: DramBuffer, tile: tuple[int, int], buf: int) -> np.ndarray:
    """Issue the reads of the 34x34 region around ``tile`` into halo buffer
    ``buf``; returns the per-row data offsets."""
    addresses, local = _halo_rows(job, src, tile, buf)
    if job.aligned_reads:
        return read_rows_aligned(ctx, src, addresses, src.base_address, HALO_ROW_BYTES, local)
    ctx.noc_async_read_rows(src, addresses, local, HALO_ROW_BYTES)
    return np.zeros(HALO, dtype=np.int64)


def _fetch_halo_blocking(ctx: KernelContext, job: _Job, src: DramBuffer, tile: tuple[int, int]):
    """Listing-style fetch: every aligned read is followed by its own barrier."""
    addresses, local = _halo_rows(job, src, tile, 0)
    offsets = []
    for a, dst in zip(addresses.tolist(), local.tolist()):
        offsets.append(read_data_aligned(ctx, src, a, src.base_address, HALO_ROW_BYTES, dst))
        yield from ctx.noc_async_read_barrier()
    return np.asarray(offsets)


def _halo_array(ctx: KernelContext, base: int, offsets: list[int]) -> np.ndarray:
    starts = base + np.arange(HALO) * HALO_SLOT + np.asarray(offsets)
    raw = ctx.core.sram[starts[:, None] + np.arange(HALO_ROW_BYTES)]
    return np.ascontiguousarray(raw).view("<u2").reshape(HALO, HALO)


def _deliver_tiles(ctx: KernelContext, halo: np.ndarray):
    """Copy the four shifted 32x32 views of a halo region into the input CBs."""
    views = {
        CB_W: halo[1:33, 0:32], CB_E: halo[1:33, 2:34],
        CB_N: halo[0:32, 1:33], CB_S: halo[2:34, 1:33],
    }
    for cb in INPUT_CBS:
        yield from ctx.cb_reserve_back(cb, 1)
        addr = ctx.cb_write_address(cb)
        ctx.core.sram[addr:addr + TILE_BYTES] = np.ascontiguousarray(views[cb], dtype="<u2").view(np.uint8).ravel()
        ctx.charge_memcpy(TILE_BYTES, TILE_DIM)
        yield from ctx.cb_push_back(cb, 1)


def _initial_reader(ctx: KernelContext, job: _Job):
    yield from _load_scalar(ctx)
    tiles = _tiles(job.sub)
    for k in range(job.iterations):
        yield from _wait_iteration(ctx, job, k)
        src, _ = parity_buffers(job.d1, job.d2, k)
        if job.double_buffer:
            offsets = _issue_halo(ctx, job, src, tiles[0], 0)
            for i in range(len(tiles)):
                yield from ctx.noc_async_read_barrier()
                current = offsets
                if i + 1 < len(tiles):
                    offsets = _issue_halo(ctx, job, src, tiles[i + 1], (i + 1) % 2)
                yield from _deliver_tiles(ctx, _halo_array(ctx, job.halo_bufs[i % 2], current))
                ctx.batch_tick()
        else:
            for tile in tiles:
                if job.aligned_reads:
                    offsets = yield from _fetch_halo_blocking(ctx, job, src, tile)
                else:
                    offsets = _issue_halo(ctx, job, src, tile, 0)
                    yield from ctx.noc_async_read_barrier()
                yield from _deliver_tiles(ctx, _halo_array(ctx, job.halo_bufs[0], offsets))
                ctx.batch_tick()


def _initial_compute(ctx: KernelContext, job: _Job):
    yield from ctx.cb_wait_front(CB_SCALAR, 1)
    n = len(_tiles(job.sub))
    for _ in range(job.iterations * n):
        yield from _stencil(ctx)
        ctx.batch_tick()


def _initial_writer(ctx: KernelContext, job: _Job):
    d = job.domain
    tiles = _tiles(job.sub)
    for k in range(job.iterations):
        _, dst = parity_buffers(job.d1, job.d2, k)
        for ty, tx in tiles:
            yield from ctx.cb_wait_front(CB_OUT, 1)
            local = ctx.cb_read_address(CB_OUT) + ROW_STEPS * 2 * TILE_DIM
            addresses = d.address(dst.base_address, ty * TILE_DIM + 1, tx * TILE_DIM + 1) + ROW_STEPS * d.pitch_bytes
            if job.write_sync == "access":
                for a, src in zip(addresses.tolist(), local.tolist()):
                    ctx.noc_async_write_buffer(src, dst, a, 2 * TILE_DIM)
                    yield from ctx.noc_async_write_barrier()
            else:
                ctx.noc_async_write_rows(local, dst, addresses, 2 * TILE_DIM)
                yield from ctx.noc_async_write_barrier()
            yield from ctx.cb_pop_front(CB_OUT, 1)
            ctx.batch_tick()
        yield from ctx.sem_inc(job.sem)


def _common_cbs(core: Core):
    for cb in INPUT_CBS:
        core.create_cb(cb, TILE_BYTES, 4)
    core.create_cb(CB_SCALAR, TILE_BYTES, 1)
    core.create_cb(CB_INTER, TILE_BYTES, 2, producer="compute", consumer="compute")
    core.create_cb(CB_OUT, TILE_BYTES, 4, producer="compute", consumer="writer")


def _initial_setup(core: Core, job: _Job):
    _common_cbs(core)
    n = 2 if job.double_buffer else 1
    job.halo_bufs = [core.sram_alloc(HALO * HALO_SLOT) for _ in range(n)]
    return (job,)


# -- optimized kernel: 1024-element row chunks --

def _chunks(sub: Subdomain) -> list[tuple[int, int]]:
    return [(cx, min(CHUNK, sub.x1 - cx)) for cx in range(sub.x0, sub.x1, CHUNK)]


def _row_source(job: _Job, src: DramBuffer, i: int, cx: int) -> tuple[int, int, int]:
    """(DRAM address, SRAM slot, data offset) of the ``i``-th haloed row of a chunk."""
    addr = job.domain.address(src.base_address, job.sub.y0 + i, cx)
    offset = (addr - src.base_address) % 32
    return addr, job.ring + (i % RING_SLOTS) * RING_SLOT_BYTES, offset


def _optimized_reader(ctx: KernelContext, job: _Job):
    yield from _load_scalar(ctx)
    n = job.sub.ny
    for k in range(job.iterations):
        yield from _wait_iteration(ctx, job, k)
        src, _ = parity_buffers(job.d1, job.d2, k)

        def fetch(i, cx, w):
            addr, slot, _ = _row_source(job, src, i, cx)
            read_data_aligned(ctx, src, addr, src.base_address, 2 * (w + 2), slot)

        for cx, w in _chunks(job.sub):
            for b in range(n):
                for cb in INPUT_CBS:
                    yield from ctx.cb_reserve_back(cb, 1)
                if b == 0:
                    for i in range(3):
                        fetch(i, cx, w)
                yield from ctx.noc_async_read_barrier()
                for cb in INPUT_CBS:
                    yield from ctx.cb_push_back(cb, 1)
                if b + 3 <= n + 1:
                    fetch(b + 3, cx, w)
                ctx.batch_tick()


def _optimized_compute(ctx: KernelContext, job: _Job):
    yield from ctx.cb_wait_front(CB_SCALAR, 1)
    n = job.sub.ny
    for k in range(job.iterations):
        src, _ = parity_buffers(job.d1, job.d2, k)
        for cx, _w in _chunks(job.sub):
            for b in range(n):
                rows = [_row_source(job, src, b + j, cx) for j in range(3)]
                ptrs = {
                    CB_W: rows[1][1] + rows[1][2],
                    CB_E: rows[1][1] + rows[1][2] + 4,
                    CB_N: rows[0][1] + rows[0][2] + 2,
                    CB_S: rows[2][1] + rows[2][2] + 2,
                }
                yield from _stencil(ctx, lambda cb: ctx.cb_set_rd_ptr(cb, ptrs[cb]))
                ctx.batch_tick()


def _optimized_writer(ctx: KernelContext, job: _Job):
    d = job.domain
    for k in range(job.iterations):
        _, dst = parity_buffers(job.d1, job.d2, k)
        for cx, w in _chunks(job.sub):
            for b in range(job.sub.ny):
                yield from ctx.cb_wait_front(CB_OUT, 1)
                addr = d.address(dst.base_address, job.sub.y0 + b + 1, cx + 1)
                ctx.noc_async_write_buffer(ctx.cb_read_address(CB_OUT), dst, addr, 2 * w)
                yield from ctx.noc_async_write_barrier()
                yield from ctx.cb_pop_front(CB_OUT, 1)
                ctx.batch_tick()
        yield from ctx.sem_inc(job.sem)


def _optimized_setup(core: Core, job: _Job):
    for cb in INPUT_CBS:
        # one page each: the reader may only publish a batch once compute
        # released the previous one, which is what frees its ring slot
        core.create_cb(cb, 32, 1)
    core.create_cb(CB_SCALAR, TILE_BYTES, 1)
    core.create_cb(CB_INTER, TILE_BYTES, 2, producer="compute", consumer="compute")
    core.create_cb(CB_OUT, TILE_BYTES, 4, producer="compute", consumer="writer")
    job.ring = core.sram_alloc(RING_SLOTS * RING_SLOT_BYTES)
    return (job,)


INITIAL = KernelProgram(_initial_reader, _initial_writer, _initial_compute, _initial_setup)
OPTIMIZED = KernelProgram(_optimized_reader, _optimized_writer, _optimized_compute, _optimized_setup)


# -- host side --

@dataclass
class JacobiResult:
    grid: np.ndarray
    report: RunReport
    iterations: int
    points: int

    @property
    def seconds(self) -> float:
        return self.report.virtual_seconds

    @property
    def gpt_s(self) -> float:
        return gpt_per_s(self.points, self.iterations, self.seconds) if self.seconds > 0 else float("inf")


def _run(program: KernelProgram, domain: Domain, iterations: int, cores: int, unit_x: int, unit_y: int,
         cores_xy: Optional[tuple[int, int]], params: Optional[CostParams], ablation: Optional[Ablation],
         placement: Optional[Placement], write_mode: WriteMode, **job_kwargs) -> JacobiResult:
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    cx, cy = cores_xy or (1, cores)
    if cx * cy != cores:
        raise ValueError(f"core grid {cx}x{cy} does not hold {cores} cores")
    grid = CoreGrid()
    if cores > grid.worker_cores:
        raise ValueError(f"{cores} cores requested, {grid.worker_cores} available")
    dram = Dram(DramConfig(write_mode=write_mode))
    d1, d2 = domain.allocate(dram, placement or SingleBank(0))
    subs = [s for s in decompose(domain.nx, domain.ny, cx, cy, unit_x, unit_y, strict=False) if not s.empty]
    sim = Simulator(dram, params, grid, ablation)
    sem = sim.semaphore("iteration")
    args = {s.core: _Job(domain, d1, d2, iterations, s, sem, len(subs), **job_kwargs) for s in subs}
    report = launch(program, args, sim=sim) if iterations else sim.run()
    out = domain.read_grid(dram, result_buffer(d1, d2, iterations))
    return JacobiResult(out, report, iterations, domain.points)


def initial_kernel(domain: Domain, iterations: int, cores: int = 1, *, params: Optional[CostParams] = None,
                   double_buffer: bool = True, write_sync: str = "batch", aligned_reads: bool = True,
                   ablation: Optional[Ablation] = None, placement: Optional[Placement] = None,
                   write_mode: WriteMode = WriteMode.STRICT,
                   cores_xy: Optional[tuple[int, int]] = None) -> JacobiResult:
    """Tiled kernel: one 32x32 result tile per batch, halos fetched as 34 short reads."""
    if domain.nx % TILE_DIM or domain.ny % TILE_DIM:
        raise ValueError("the tiled kernel needs nx and ny to be multiples of 32")
    if write_sync not in ("batch", "access"):
        raise ValueError("write_sync must be 'batch' or 'access'")
    return _run(INITIAL, domain, iterations, cores, TILE_DIM, TILE_DIM, cores_xy, params, ablation,
                placement, write_mode, double_buffer=double_buffer, aligned_reads=aligned_reads,
                write_sync=write_sync)


def optimized_kernel(domain: Domain, iterations: int, cores: int = 1, *, params: Optional[CostParams] = None,
                     ablation: Optional[Ablation] = None, placement: Optional[Placement] = None,
                     cores_xy: Optional[tuple[int, int]] = None) -> JacobiResult:
    """Row-chunk kernel: rows of up to 1024 elements flow through a 4-slot
    SRAM ring; compute reads its W/E/N/S inputs straight out of the ring."""
    if domain.nx % TILE_DIM:
        raise ValueError("the row-chunk kernel needs nx to be a multiple of 32")
    if not domain.padded:
        raise ValueError("the row-chunk kernel writes whole rows and needs the padded layout")
    return _run(OPTIMIZED, domain, iterations, cores, TILE_DIM, 1, cores_xy, params, ablation,
                placement, WriteMode.STRICT)


def probe_halo(domain: Domain, tile: tuple[int, int] = (0, 0), aligned: bool = True) -> tuple[np.ndarray, list]:
    """Fetch one tile's 34x34 input region from DRAM the way the tiled reader
    does; returns the region as BF16 bits plus the fault log."""
    dram = Dram()
    d1, d2 = domain.allocate(dram)
    sim = Simulator(dram)
    sub = Subdomain(0, 0, domain.ny, 0, domain.nx)
    job = _Job(domain, d1, d2, 1, sub, sim.semaphore("iteration"), 1, aligned_reads=aligned)
    out = {}

    def reader(ctx, job):
        job.halo_bufs = [ctx.core.sram_alloc(HALO * HALO_SLOT)]
        offsets = _issue_halo(ctx, job, d1, tile, 0)
        yield from ctx.noc_async_read_barrier()
        out["halo"] = _halo_array(ctx, job.halo_bufs[0], offsets)

    sim.spawn(0, "reader", reader, job)
    report = sim.run()
    return out["halo"].astype(np.uint16), report.faults


def true_halo(domain: Domain, grid: np.ndarray, tile: tuple[int, int] = (0, 0)) -> np.ndarray:
    ty, tx = tile
    return grid[ty * TILE_DIM:ty * TILE_DIM + HALO, tx * TILE_DIM:tx * TILE_DIM + HALO]
