"""Closed-form steady-state runtimes that mirror the discrete-event model.

These are what calibration fits against: a least-squares search needs
thousands of evaluations, far too many for the simulator. Each formula
follows the task structure of the corresponding program. A task repeats a
fixed period (engine occupancy plus exposed round trips plus local work).
Tasks connected by circular buffers settle at the slowest period. Banks add
a shared floor of total bank busy time over the banks that serve it.
"""

from __future__ import annotations

from typing import Optional

from .bench import AccessOrder, JacobiConfig, Route, StreamConfig, SyncMode
from .cost import CostParams, gpt_per_s
from .dram import DramConfig, Interleaved, Placement
from .jacobi.domain import PAD_ELEMS
from .tensix import Ablation

N_BANKS = DramConfig().bank_count
TILE = 32
HALO_ROWS = TILE + 2
CHUNK = 1024


def _page(placement: Placement) -> Optional[int]:
    return placement.page_size if isinstance(placement, Interleaved) else None


def _pieces(length: int, page: Optional[int]) -> list[int]:
    """Per-bank piece lengths of a page-aligned request."""
    if page is None or length <= page:
        return [length]
    full, rest = divmod(length, page)
    return [page] * full + ([rest] if rest else [])


def _request(p: CostParams, kind: str, length: int, contiguous: bool, page: Optional[int]):
    """(engine occupancy, issue-only time, bank busy time) of one request."""
    occ = issue = bank = 0.0
    for i, n in enumerate(_pieces(length, page)):
        o_issue = p.issue_ns(kind, contiguous or i > 0, page)
        issue += o_issue
        occ += p.occupancy_ns(kind, n, contiguous or i > 0, page)
        bank += p.bank_ns(n)
    return occ, issue, bank


def _banks(page: Optional[int]) -> int:
    return 1 if page is None else N_BANKS


# -- streaming benchmark --

def _stream_side(cfg: StreamConfig, p: CostParams, kind: str) -> tuple[float, float]:
    """(period per row, bank busy per row) of one data mover."""
    batch, sync, order = cfg.side(kind)
    page = _page(cfg.placement)
    k = cfg.row_bytes // batch
    reps = cfg.replication if kind == "read" else 1
    column = order is AccessOrder.COLUMN_MAJOR and kind == cfg.direction
    g = 4 if column else 1
    contiguous = reps == 1 and (not column or k == 1)
    occ, _, bank = _request(p, kind, batch, contiguous, page)
    lat = p.latency_ns(kind, page is not None)
    nb = _banks(page)
    per_row_reqs = k * reps
    if sync is SyncMode.PER_ACCESS:
        period = per_row_reqs * (max(occ, bank / nb) + lat)
    else:
        n = per_row_reqs * g
        period = (max(n * occ, n * bank / nb) + lat) / g
    if kind == "read" and cfg.route is Route.VIA_LOCAL_BUFFER_MEMCPY:
        period += p.memcpy_ns(cfg.row_bytes)
    return period, per_row_reqs * bank


def stream_seconds(cfg: StreamConfig, p: CostParams) -> float:
    pr, br = _stream_side(cfg, p, "read")
    pw, bw = _stream_side(cfg, p, "write")
    floor = cfg.cores * (br + bw) / _banks(_page(cfg.placement))
    period = max(pr, pw, floor)
    return (cfg.rows_per_core * period + min(pr, pw)) * 1e-9


# -- Jacobi kernels --

def _initial_tile(cfg: JacobiConfig, p: CostParams) -> tuple[float, float, float, float]:
    """(reader, compute, writer) periods and bank time per tile."""
    ab = Ablation.from_flags(cfg.ablation)
    page = _page(cfg.placement)
    bo = p.batch_overhead_ns
    # halo rows start one element left of a 32-byte aligned interior
    read_len = 2 * HALO_ROWS + 2 * (PAD_ELEMS - 1) % 32
    o_r, iss_r, b_r = _request(p, "read", read_len, False, page)
    o_w, _, b_w = _request(p, "write", 2 * TILE, False, page)
    lat_r = p.latency_ns("read", page is not None)
    lat_w = p.latency_ns("write", page is not None)
    nb = _banks(page)
    memcpy = 4 * p.memcpy_ns(2 * TILE * TILE, TILE) if ab.memcpy else 0.0
    if not ab.read:
        reader = memcpy + bo
    elif cfg.double_buffer:
        reader = max(max(HALO_ROWS * o_r, HALO_ROWS * b_r / nb) + lat_r, HALO_ROWS * iss_r + memcpy + bo)
    else:
        reader = HALO_ROWS * (max(o_r, b_r / nb) + lat_r) + memcpy + bo
    compute = 4 * p.tileop_ns * ab.compute + bo
    if not ab.write:
        writer = bo
    elif cfg.write_sync == "access":
        writer = TILE * (max(o_w, b_w / nb) + lat_w) + bo
    else:
        writer = max(TILE * o_w, TILE * b_w / nb) + lat_w + bo
    bank = HALO_ROWS * b_r * ab.read + TILE * b_w * ab.write
    return reader, compute, writer, bank


def _optimized_batch(w: int, p: CostParams, page: Optional[int], ab: Ablation):
    bo = p.batch_overhead_ns
    o_r, iss_r, b_r = _request(p, "read", 2 * w + 4 + 2 * (PAD_ELEMS - 1) % 32, False, page)
    o_w, _, b_w = _request(p, "write", 2 * w, False, page)
    nb = _banks(page)
    reader = max(max(o_r, b_r / nb) + p.latency_ns("read", page is not None), iss_r + bo) if ab.read else bo
    compute = 4 * p.tileop_ns * ab.compute + bo
    writer = (max(o_w, b_w / nb) + p.latency_ns("write", page is not None) + bo) if ab.write else bo
    return reader, compute, writer, b_r * ab.read + b_w * ab.write, o_r


def _split(n: int, parts: int) -> list[int]:
    q, r = divmod(n, parts)
    return [q + (i < r) for i in range(parts)]


def jacobi_seconds(cfg: JacobiConfig, p: CostParams) -> float:
    page = _page(cfg.placement)
    nb = _banks(page)
    ab = Ablation.from_flags(cfg.ablation)
    if cfg.variant == "initial":
        reader, compute, writer, bank = _initial_tile(cfg, p)
        tiles_x = _split(cfg.nx // TILE, cfg.cores_x)
        tiles_y = _split(cfg.ny // TILE, cfg.cores_y)
        per_core = max(tiles_x) * max(tiles_y)
        total = (cfg.nx // TILE) * (cfg.ny // TILE)
        slow = max(reader, compute, writer)
        busy = max(per_core * slow, total * bank / nb)
        it = busy + reader + compute + writer - slow
    else:
        xs = _split(cfg.nx // TILE, cfg.cores_x)
        rows = max(_split(cfg.ny, cfg.cores_y))
        core_time, bank_total, fill = 0.0, 0.0, 0.0
        for nx_core in xs:
            width = nx_core * TILE
            t, f = 0.0, 0.0
            for c in range(0, width, CHUNK):
                w = min(CHUNK, width - c)
                r, cmp_, wr, bank, o_r = _optimized_batch(w, p, page, ab)
                slow = max(r, cmp_, wr)
                t += rows * slow
                bank_total += cfg.cores_y * rows * bank
                f = max(f, r + cmp_ + wr - slow + 2 * o_r)
            if t > core_time:
                core_time, fill = t, f
        it = max(core_time, bank_total / nb) + fill
    return it * cfg.iterations * 1e-9


def jacobi_gpt_s(cfg: JacobiConfig, p: CostParams) -> float:
    return gpt_per_s(cfg.points, cfg.iterations, jacobi_seconds(cfg, p))


def predict(cell, p: CostParams) -> float:
    """Runtime in seconds of a stream or Jacobi configuration."""
    if isinstance(cell, StreamConfig):
        return stream_seconds(cell, p)
    return jacobi_seconds(cell, p)


__all__ = ["stream_seconds", "jacobi_seconds", "jacobi_gpt_s", "predict"]
