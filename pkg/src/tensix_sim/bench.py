"""Streaming benchmark, Jacobi ablation harness, sweeps and table presets.

The streaming program moves a ``height x width`` array of 32-bit integers
from one DRAM buffer to another. On each core the reader data mover loads
rows into a circular buffer and the writer data mover stores them back out.
The knobs under test (batch size, sync, traversal order) apply to one side,
``direction``; the other side always moves whole rows with one barrier per
row.

Large configurations are simulated on a reduced number of rows per core and
extrapolated linearly. Streaming is a steady-state pipeline, so runtime is
affine in the number of rows once a few rows have gone through.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .cost import CostParams, default_params, energy, gpt_per_s
from .dram import Dram, DramBuffer, DramConfig, Interleaved, Placement, SingleBank, WriteMode
from .jacobi.domain import Domain
from .jacobi.kernels import JacobiResult, initial_kernel, optimized_kernel
from .tensix import Ablation, KernelContext, KernelProgram, Simulator, launch

ROW_BATCH = 16384        # batch of the side not under test
GROUP_ROWS = 4           # rows per column-major pass
CB_PAGES = 2 * GROUP_ROWS
CB_STREAM = 0
DEFAULT_BUDGET = 6000    # simulated DRAM requests per run before sampling kicks in


class SyncMode(enum.Enum):
    PER_ACCESS = "PerAccess"
    PER_ROW = "PerRow"


class AccessOrder(enum.Enum):
    CONTIGUOUS = "Contiguous"
    COLUMN_MAJOR = "ColumnMajor"


class Route(enum.Enum):
    DIRECT_TO_CB = "DirectToCB"
    VIA_LOCAL_BUFFER_MEMCPY = "ViaLocalBufferMemcpy"


class ConfigError(ValueError):
    pass


def placement_name(p: Placement) -> str:
    if isinstance(p, SingleBank):
        return "none" if p.bank == 0 else f"bank:{p.bank}"
    return str(p.page_size)


def parse_placement(text: Union[str, int, None]) -> Placement:
    """``none``/``single`` -> bank 0, ``bank:N`` -> bank N, otherwise an
    interleave page size."""
    if text is None:
        return SingleBank(0)
    s = str(text).strip().lower()
    if s in ("", "none", "single", "singlebank"):
        return SingleBank(0)
    if s.startswith("bank:"):
        return SingleBank(int(s[5:]))
    if s.endswith("k"):
        return Interleaved(int(s[:-1]) * 1024)
    return Interleaved(int(s))


@dataclass(frozen=True)
class StreamConfig:
    width: int = 4096
    height: int = 4096
    element_size: int = 4
    batch_size: int = ROW_BATCH
    sync_mode: SyncMode = SyncMode.PER_ROW
    access_order: AccessOrder = AccessOrder.CONTIGUOUS
    replication: int = 1
    placement: Placement = SingleBank(0)
    cores: int = 1
    route: Route = Route.DIRECT_TO_CB
    direction: str = "read"
    seed: int = 0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0 or self.element_size <= 0:
            raise ConfigError("width, height and element_size must be positive")
        if self.batch_size <= 0 or self.row_bytes % self.batch_size:
            raise ConfigError(f"batch size {self.batch_size} does not divide the {self.row_bytes}-byte row")
        if self.replication < 1:
            raise ConfigError("replication must be >= 1")
        if self.direction not in ("read", "write"):
            raise ConfigError("direction must be 'read' or 'write'")
        if not 1 <= self.cores <= 108:
            raise ConfigError("cores must be in 1..108")
        if self.height % self.cores:
            raise ConfigError(f"{self.height} rows do not split over {self.cores} cores")
        if self.access_order is AccessOrder.COLUMN_MAJOR and (self.height // self.cores) % GROUP_ROWS:
            raise ConfigError(f"column-major traversal needs rows per core to be a multiple of {GROUP_ROWS}")

    @property
    def row_bytes(self) -> int:
        return self.width * self.element_size

    @property
    def rows_per_core(self) -> int:
        return self.height // self.cores

    @property
    def total_bytes(self) -> int:
        return self.row_bytes * self.height

    def side(self, kind: str) -> tuple[int, SyncMode, AccessOrder]:
        """(batch, sync, order) used by the ``kind`` data mover."""
        if kind == self.direction:
            return self.batch_size, self.sync_mode, self.access_order
        return min(ROW_BATCH, self.row_bytes), SyncMode.PER_ROW, AccessOrder.CONTIGUOUS

    @property
    def group_rows(self) -> int:
        return GROUP_ROWS if self.access_order is AccessOrder.COLUMN_MAJOR else 1

    def to_row(self) -> dict:
        return {
            "width": self.width, "height": self.height, "element_size": self.element_size,
            "batch_size": self.batch_size, "sync_mode": self.sync_mode.value,
            "access_order": self.access_order.value, "replication": self.replication,
            "placement": placement_name(self.placement), "cores": self.cores,
            "route": self.route.value, "direction": self.direction,
        }


@dataclass
class StreamResult:
    virtual_seconds: float
    bytes_moved: int
    faults: int
    per_core: dict
    passthrough: bool
    energy_joules: float
    sampled_rows: Optional[tuple[int, int]] = None


# -- the streaming program --

@dataclass
class _StreamJob:
    cfg: StreamConfig
    src: DramBuffer
    dst: DramBuffer
    row0: int
    rows: int
    height: int
    local: int = 0
    scratch: int = 0


def _row_plan(cfg: StreamConfig, kind: str, row_ids: Sequence[int], height: int, base: int):
    """Per-request (DRAM address, SRAM offset within the group) in issue order.

    Column-major passes go down the group for each batch column in turn.
    Replicated reads (reads only) re-fetch the same batch of the previous
    ``replication - 1`` rows into a scratch row right after the primary one.
    """
    batch, _, order = cfg.side(kind)
    rb = cfg.row_bytes
    k = rb // batch
    reps = cfg.replication if kind == "read" else 1
    addrs, local, primary = [], [], []
    cols = range(k)
    rows = list(enumerate(row_ids))
    seq = ((p, r, j) for j in cols for p, r in rows) if order is AccessOrder.COLUMN_MAJOR \
        else ((p, r, j) for p, r in rows for j in cols)
    for p, r, j in seq:
        addrs.append(base + r * rb + j * batch)
        local.append(p * rb + j * batch)
        primary.append(True)
        for q in range(1, reps):
            addrs.append(base + ((r - q) % height) * rb + j * batch)
            local.append(-1 - j * batch)  # scratch, offset j*batch
            primary.append(False)
    return np.array(addrs, dtype=np.int64), np.array(local, dtype=np.int64), batch


def _resolve_local(local: np.ndarray, page_addr: list[int], rb: int, scratch: int) -> np.ndarray:
    out = np.empty_like(local)
    prim = local >= 0
    p = local[prim] // rb
    out[prim] = np.asarray(page_addr, dtype=np.int64)[p] + local[prim] % rb
    out[~prim] = scratch + (-1 - local[~prim])
    return out


def _stream_reader(ctx: KernelContext, job: _StreamJob):
    cfg = job.cfg
    rb = cfg.row_bytes
    _, sync, _ = cfg.side("read")
    g = cfg.group_rows if cfg.direction == "read" else 1
    memcpy = cfg.route is Route.VIA_LOCAL_BUFFER_MEMCPY
    for g0 in range(job.row0, job.row0 + job.rows, g):
        row_ids = list(range(g0, min(g0 + g, job.row0 + job.rows)))
        n = len(row_ids)
        yield from ctx.cb_reserve_back(CB_STREAM, n)
        pages = [ctx.cb_write_address(CB_STREAM, i) for i in range(n)]
        targets = [job.local + i * rb for i in range(n)] if memcpy else pages
        addrs, local, batch = _row_plan(cfg, "read", row_ids, job.height, job.src.base_address)
        local = _resolve_local(local, targets, rb, job.scratch)
        if sync is SyncMode.PER_ACCESS:
            for a, dst in zip(addrs.tolist(), local.tolist()):
                ctx.noc_async_read_buffer(job.src, a, dst, batch)
                yield from ctx.noc_async_read_barrier()
        else:
            ctx.noc_async_read_rows(job.src, addrs, local, batch)
            yield from ctx.noc_async_read_barrier()
        if memcpy:
            for i in range(n):
                ctx.memcpy(pages[i], targets[i], rb)
        yield from ctx.cb_push_back(CB_STREAM, n)


def _stream_writer(ctx: KernelContext, job: _StreamJob):
    cfg = job.cfg
    rb = cfg.row_bytes
    _, sync, _ = cfg.side("write")
    g = cfg.group_rows if cfg.direction == "write" else 1
    for g0 in range(job.row0, job.row0 + job.rows, g):
        row_ids = list(range(g0, min(g0 + g, job.row0 + job.rows)))
        n = len(row_ids)
        yield from ctx.cb_wait_front(CB_STREAM, n)
        pages = [ctx.cb_read_address(CB_STREAM, i) for i in range(n)]
        addrs, local, batch = _row_plan(cfg, "write", row_ids, job.height, job.dst.base_address)
        local = _resolve_local(local, pages, rb, 0)
        if sync is SyncMode.PER_ACCESS:
            for a, src in zip(addrs.tolist(), local.tolist()):
                ctx.noc_async_write_buffer(src, job.dst, a, batch)
                yield from ctx.noc_async_write_barrier()
        else:
            ctx.noc_async_write_rows(local, job.dst, addrs, batch)
            yield from ctx.noc_async_write_barrier()
        yield from ctx.cb_pop_front(CB_STREAM, n)


def _stream_setup(core, job: _StreamJob):
    rb = job.cfg.row_bytes
    core.create_cb(CB_STREAM, rb, CB_PAGES, producer="reader", consumer="writer")
    job.local = core.sram_alloc(GROUP_ROWS * rb)
    job.scratch = core.sram_alloc(rb)
    return (job,)


STREAM = KernelProgram(reader=_stream_reader, writer=_stream_writer, setup=_stream_setup)


def payload(cfg: StreamConfig, rows: int) -> np.ndarray:
    """Deterministic pseudorandom 32-bit integers for ``rows`` rows."""
    rng = np.random.default_rng(cfg.seed)
    n = rows * cfg.row_bytes // 4
    return np.frombuffer(rng.bytes(4 * n), dtype="<i4")


def _simulate(cfg: StreamConfig, rows_per_core: int, params: CostParams):
    """One DES run processing ``rows_per_core`` rows on each core."""
    processed = rows_per_core * cfg.cores
    height = max(processed, cfg.replication + 1) if processed < cfg.height else cfg.height
    aligned = all(cfg.side(k)[0] % 32 == 0 for k in ("read", "write"))
    dram = Dram(DramConfig(write_mode=WriteMode.STRICT if aligned else WriteMode.PERMISSIVE_CORRUPTING))
    nbytes = height * cfg.row_bytes
    src = dram.allocate(cfg.placement, nbytes)
    dst = dram.allocate(cfg.placement, nbytes)
    data = payload(cfg, height).view(np.uint8)
    dram.host_write(src, 0, data)
    sim = Simulator(dram, params)
    jobs = {c: _StreamJob(cfg, src, dst, c * rows_per_core, rows_per_core, height) for c in range(cfg.cores)}
    report = launch(STREAM, jobs, sim=sim)
    done = processed * cfg.row_bytes
    ok = bool(np.array_equal(dst.data[:done], data[:done]))
    return report, ok


def _request_estimate(cfg: StreamConfig) -> int:
    """DRAM requests (page pieces included) per row per core."""
    total = 0
    for kind in ("read", "write"):
        batch, _, _ = cfg.side(kind)
        k = cfg.row_bytes // batch
        reps = cfg.replication if kind == "read" else 1
        pieces = 1
        if isinstance(cfg.placement, Interleaved):
            pieces = max(1, math.ceil(batch / cfg.placement.page_size)) + (1 if batch % cfg.placement.page_size else 0)
        total += k * reps * pieces
    return total


def run_stream(cfg: StreamConfig, params: Optional[CostParams] = None, *,
               budget: int = DEFAULT_BUDGET) -> StreamResult:
    """Simulate the streaming program; extrapolate from two row samples when
    the full run would exceed ``budget`` requests."""
    params = params or default_params()
    unit = GROUP_ROWS if cfg.access_order is AccessOrder.COLUMN_MAJOR else 1
    per_row = _request_estimate(cfg)
    full = cfg.rows_per_core
    m = max(2, budget // max(1, 3 * cfg.cores * per_row * unit))
    r1, r2 = m * unit, 2 * m * unit
    bytes_moved = cfg.total_bytes * (cfg.replication + 1)
    if r2 >= full:
        report, ok = _simulate(cfg, full, params)
        secs = report.virtual_seconds
        return StreamResult(secs, bytes_moved, len(report.faults), report.per_core, ok,
                            energy(params, secs))
    rep1, ok1 = _simulate(cfg, r1, params)
    rep2, ok2 = _simulate(cfg, r2, params)
    scale = (full - r2) / (r2 - r1)
    secs = rep2.virtual_seconds + (rep2.virtual_seconds - rep1.virtual_seconds) * scale
    faults = len(rep2.faults) + (len(rep2.faults) - len(rep1.faults)) * scale
    return StreamResult(secs, bytes_moved, int(round(faults)), rep2.per_core, ok1 and ok2,
                        energy(params, secs), (r1, r2))


# -- Jacobi predictions --

@dataclass(frozen=True)
class JacobiConfig:
    variant: str = "optimized"
    nx: int = 512
    ny: int = 512
    iterations: int = 10000
    cores_y: int = 1
    cores_x: int = 1
    placement: Placement = SingleBank(0)
    double_buffer: bool = True
    write_sync: str = "batch"
    ablation: str = "YYYY"

    def __post_init__(self):
        if self.variant not in ("initial", "optimized"):
            raise ConfigError("variant must be 'initial' or 'optimized'")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        Ablation.from_flags(self.ablation)

    @property
    def cores(self) -> int:
        return self.cores_x * self.cores_y

    @property
    def points(self) -> int:
        return self.nx * self.ny

    def to_row(self) -> dict:
        return {
            "variant": self.variant, "nx": self.nx, "ny": self.ny, "iterations": self.iterations,
            "cores_y": self.cores_y, "cores_x": self.cores_x, "placement": placement_name(self.placement),
            "double_buffer": self.double_buffer, "write_sync": self.write_sync, "ablation": self.ablation,
        }


@dataclass
class JacobiPrediction:
    virtual_seconds: float
    gpt_s: float
    energy_joules: float
    sampled: bool


def _jacobi_run(cfg: JacobiConfig, ny: int, iterations: int, params: CostParams) -> JacobiResult:
    dom = Domain(cfg.nx, ny)
    kw = dict(params=params, ablation=Ablation.from_flags(cfg.ablation), placement=cfg.placement,
              cores_xy=(cfg.cores_x, cfg.cores_y))
    if cfg.variant == "initial":
        return initial_kernel(dom, iterations, cfg.cores, double_buffer=cfg.double_buffer,
                              write_sync=cfg.write_sync, **kw)
    return optimized_kernel(dom, iterations, cfg.cores, **kw)


def predict_jacobi(cfg: JacobiConfig, params: Optional[CostParams] = None, *,
                   max_batches: int = 3000) -> JacobiPrediction:
    """Runtime of ``cfg.iterations`` iterations from short simulations.

    One and two iterations are simulated; their difference is the
    steady-state iteration time. When one iteration of the full domain has
    more than ``max_batches`` batches, two reduced heights (rows per core
    ``r`` and ``2r``) are simulated as well and both times are extrapolated
    linearly to the real rows per core.
    """
    params = params or default_params()
    unit_y = 32 if cfg.variant == "initial" else 1
    batch_points = 1024
    per_iter = cfg.points // batch_points

    def two(ny):
        a = _jacobi_run(cfg, ny, 1, params).seconds
        b = _jacobi_run(cfg, ny, 2, params).seconds
        return a, b - a

    if per_iter <= max_batches or cfg.iterations <= 2:
        first, step = two(cfg.ny)
        sampled = False
    else:
        full_rows = math.ceil(cfg.ny / cfg.cores_y)
        chunks = math.ceil(cfg.nx / cfg.cores_x / 1024) * cfg.cores
        r1 = max(unit_y, (max_batches // max(1, 2 * chunks)) // unit_y * unit_y)
        r1 = min(r1, max(unit_y, full_rows // 2 // unit_y * unit_y))
        r2 = 2 * r1
        if r2 >= full_rows:
            first, step = two(cfg.ny)
            sampled = False
        else:
            f1, s1 = two(r1 * cfg.cores_y)
            f2, s2 = two(r2 * cfg.cores_y)
            k = (full_rows - r2) / (r2 - r1)
            first = f2 + (f2 - f1) * k
            step = s2 + (s2 - s1) * k
            sampled = True
    secs = first + step * (cfg.iterations - 1)
    return JacobiPrediction(secs, gpt_per_s(cfg.points, cfg.iterations, secs), energy(params, secs), sampled)


def run_ablation(toggles: Union[str, Ablation], params: Optional[CostParams] = None, *,
                 nx: int = 512, ny: int = 512, iterations: int = 10000) -> float:
    """GPt/s of the tiled kernel with the disabled phases costing nothing.

    Data still flows through every phase, so CB structure and
    synchronisation are unchanged.
    """
    flags = toggles.flags() if isinstance(toggles, Ablation) else toggles
    cfg = JacobiConfig("initial", nx, ny, iterations, ablation=flags)
    return predict_jacobi(cfg, params).gpt_s


# -- sweeps --

CSV_TAIL = ["read_runtime_s", "write_runtime_s", "gpt_s", "energy_j", "faults"]
STREAM_FIELDS = list(StreamConfig().to_row())
JACOBI_FIELDS = list(JacobiConfig().to_row())


@dataclass
class SweepRow:
    config: dict
    read_runtime_s: Optional[float]
    write_runtime_s: Optional[float]
    gpt_s: float
    energy_j: float
    faults: int

    def as_dict(self) -> dict:
        d = dict(self.config)
        d.update(read_runtime_s=self.read_runtime_s, write_runtime_s=self.write_runtime_s,
                 gpt_s=self.gpt_s, energy_j=self.energy_j, faults=self.faults)
        return d

    @property
    def runtime_s(self) -> float:
        return self.read_runtime_s if self.read_runtime_s is not None else self.write_runtime_s


Cell = Union[StreamConfig, JacobiConfig]


def evaluate(cell: Cell, params: Optional[CostParams] = None) -> SweepRow:
    params = params or default_params()
    if isinstance(cell, StreamConfig):
        res = run_stream(cell, params)
        t = res.virtual_seconds
        points = cell.width * cell.height
        return SweepRow(cell.to_row(), t if cell.direction == "read" else None,
                        t if cell.direction == "write" else None,
                        gpt_per_s(points, 1, t), res.energy_joules, res.faults)
    pred = predict_jacobi(cell, params)
    return SweepRow(cell.to_row(), pred.virtual_seconds, None, pred.gpt_s, pred.energy_joules, 0)


def sweep(cells: Iterable[Cell], params: Optional[CostParams] = None) -> list[SweepRow]:
    params = params or default_params()
    return [evaluate(c, params) for c in cells]


def grid(base: StreamConfig, **axes) -> list[StreamConfig]:
    """Cartesian product of ``axes`` (field name -> values) over ``base``."""
    names = list(axes)
    return [replace(base, **dict(zip(names, combo))) for combo in itertools.product(*(axes[n] for n in names))]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def to_csv(rows: Sequence[SweepRow]) -> str:
    if not rows:
        return ""
    keys = list(rows[0].config) + CSV_TAIL
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        d = r.as_dict()
        w.writerow([_fmt(d.get(k)) for k in keys])
    return out.getvalue()


# -- presets mirroring the published table shapes --

BATCHES = tuple(16384 >> i for i in range(13))  # 16384 .. 4
TABLE6_REPLICATION = (1, 8, 16, 32)
PAGES_T6 = (None, 65536, 32768, 16384, 8192, 4096, 2048, 1024)
PAGES_T7 = (None, 65536, 32768, 16384, 8192, 4096, 2048)
TABLE8_GEOMETRY = ((1, 1, 1), (2, 1, 2), (4, 1, 4), (8, 2, 4), (32, 8, 4), (64, 8, 8), (72, 8, 9), (108, 12, 9))
TABLE2_FLAGS = ("NNNN", "NNYN", "NNNY", "YNNN", "NYNN", "YYNN")
TABLE1_VARIANTS = {
    "Initial": dict(double_buffer=False, write_sync="access"),
    "Data write optimised": dict(double_buffer=False, write_sync="batch"),
    "Double buffering": dict(double_buffer=True, write_sync="batch"),
}


def _pl(page: Optional[int]) -> Placement:
    return SingleBank(0) if page is None else Interleaved(page)


def table_sweep(order: AccessOrder) -> list[StreamConfig]:
    cells = []
    for direction in ("read", "write"):
        for sync in (SyncMode.PER_ROW, SyncMode.PER_ACCESS):
            for b in BATCHES:
                cells.append(StreamConfig(batch_size=b, sync_mode=sync, access_order=order, direction=direction))
    return cells


def table8_cells(placement: Placement = Interleaved(65536)) -> list[JacobiConfig]:
    return [JacobiConfig("optimized", 9216, 1024, 5000, cy, cx, placement) for _, cy, cx in TABLE8_GEOMETRY]


def preset(name: str) -> list[Cell]:
    name = name.lower()
    if name == "table1":
        return [JacobiConfig("initial", 512, 512, 10000, **kw) for kw in TABLE1_VARIANTS.values()]
    if name == "table2":
        return [JacobiConfig("initial", 512, 512, 10000, ablation=f) for f in TABLE2_FLAGS]
    if name == "table3":
        return table_sweep(AccessOrder.CONTIGUOUS)
    if name == "table4":
        return table_sweep(AccessOrder.COLUMN_MAJOR)
    if name == "table5":
        return [StreamConfig(replication=r) for r in (1, 2, 4, 8, 16, 32)]
    if name == "table6":
        return [StreamConfig(replication=r, placement=_pl(p)) for p in PAGES_T6 for r in TABLE6_REPLICATION]
    if name == "table7":
        return [StreamConfig(cores=c, placement=_pl(p)) for p in PAGES_T7 for c in (1, 2, 4, 8)]
    if name == "table8":
        return table8_cells()
    if name == "memcpy":
        return [StreamConfig(route=Route.VIA_LOCAL_BUFFER_MEMCPY)]
    raise KeyError(f"unknown preset {name!r}")


PRESETS = ("table1", "table2", "table3", "table4", "table5", "table6", "table7", "table8", "memcpy")
