"""Least-squares calibration of ``CostParams`` against the bundled measurements.

Residuals are ``log(predicted / measured)`` over runtimes, so every row weighs
the same whatever its magnitude. Coefficients are searched in log space,
which keeps them positive. Predictions come from the closed forms in
``analytic``; the simulator itself is too slow to sit inside the optimizer.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from importlib import resources
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import analytic
from .bench import TABLE1_VARIANTS, AccessOrder, JacobiConfig, Route, StreamConfig, SyncMode
from .cost import INTERLEAVE_PAGES, CostParams
from .dram import Interleaved, SingleBank

# every coefficient except the board power
FITTED = (
    "read_req_ns", "write_req_ns", "read_byte_ns", "write_byte_ns", "sync_roundtrip_ns",
    "write_sync_roundtrip_ns", "noncontig_req_ns", "memcpy_byte_ns", "memcpy_call_ns", "tileop_ns",
    "batch_overhead_ns", "bank_bw_bytes_per_s", "bank_req_ns", "page_req_ns", "interleave_latency_ns",
) + tuple(f"interleave_factor_{p}" for p in INTERLEAVE_PAGES)

SENSITIVITY = 0.01   # |d log runtime / d log coefficient| for a row to count as constraining
FLOOR = 1e-6         # search floor for coefficients, in their own units


class FitDiverged(RuntimeError):
    pass


@dataclass
class Target:
    table: str
    label: str
    predict: Callable[[CostParams], float]
    measured_s: float
    fit: bool = True
    weight: float = 1.0


@dataclass
class Residual:
    table: str
    label: str
    predicted_s: float
    measured_s: float
    fitted: bool

    @property
    def ratio(self) -> float:
        return self.predicted_s / self.measured_s


@dataclass
class CalibrationReport:
    params: CostParams
    residuals: list[Residual]
    constrained_by: dict[str, list[str]]
    method: str
    cost: float
    evaluations: int = 0

    def table(self, name: str) -> list[Residual]:
        return [r for r in self.residuals if r.table == name]

    def worst_ratio(self, name: Optional[str] = None) -> float:
        """Largest symmetric ratio max(p/m, m/p) over a table (or all rows)."""
        rows = self.table(name) if name else self.residuals
        return max(max(r.ratio, 1 / r.ratio) for r in rows)

    def residuals_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["table", "row", "predicted_s", "measured_s", "ratio", "fitted"])
        for r in self.residuals:
            w.writerow([r.table, r.label, f"{r.predicted_s:.6g}", f"{r.measured_s:.6g}", f"{r.ratio:.4f}",
                        int(r.fitted)])
        return out.getvalue()

    def summary(self) -> str:
        lines = [f"method: {self.method}", f"cost: {self.cost:.6g}"]
        for name in dict.fromkeys(r.table for r in self.residuals):
            lines.append(f"{name}: worst ratio {self.worst_ratio(name):.3f} over {len(self.table(name))} rows")
        lines.append("coefficients:")
        values = self.params.to_dict()
        for name in FITTED:
            rows = self.constrained_by.get(name, [])
            shown = ", ".join(rows[:6]) + (f", ... ({len(rows)} rows)" if len(rows) > 6 else "")
            lines.append(f"  {name} = {values[name]:.6g}  <- {shown or 'unconstrained'}")
        return "\n".join(lines) + "\n"


# -- measurement tables --

def measurements(name: str) -> list[dict]:
    """Rows of a bundled measurement CSV as dicts of strings."""
    text = resources.files("tensix_sim.data").joinpath(name).read_text()
    return list(csv.DictReader(io.StringIO(text)))


def anchors() -> dict[str, float]:
    return {r["name"]: float(r["value"]) for r in measurements("anchors.csv")}


def _stream(cfg: StreamConfig) -> Callable[[CostParams], float]:
    return lambda p: analytic.stream_seconds(cfg, p)


def _jacobi(*cfgs: JacobiConfig) -> Callable[[CostParams], float]:
    return lambda p: min(analytic.jacobi_seconds(c, p) for c in cfgs)


def _seconds(points: int, iterations: int, gpt_s: float) -> float:
    return points * iterations / (gpt_s * 1e9)


def table8_configs(cores_y: int, cores_x: int, nx: int, ny: int, iterations: int) -> tuple[JacobiConfig, ...]:
    """Both DRAM placements tried for a Table-8 row; the faster one is reported."""
    return tuple(JacobiConfig("optimized", nx, ny, iterations, cores_y, cores_x, pl)
                 for pl in (SingleBank(0), Interleaved(65536)))


# Table 8 prints Y=4, X=4 for its 8-core row, which holds 16 cores
TABLE8_GEOMETRY_FIX = {8: (2, 4)}
TABLE8_FITTED = (1, 108)
TABLE7_WEIGHT = 10.0
TABLE8_WEIGHT = 3.0   # two rows against a hundred streaming rows  # the single-bank saturation rows pin the bank service rate


def targets() -> list[Target]:
    a = anchors()
    out: list[Target] = []
    n2, it2 = int(a["table2_nx"]) * int(a["table2_ny"]), int(a["table2_iterations"])
    for row in measurements("table1.csv"):
        kw = TABLE1_VARIANTS.get(row["version"])
        if kw is None:
            continue
        cfg = JacobiConfig("initial", int(a["table2_nx"]), int(a["table2_ny"]), it2, **kw)
        out.append(Target("table1", row["version"], _jacobi(cfg), _seconds(n2, it2, float(row["gpt_s"])),
                          fit=row["version"] == "Double buffering"))
    for row in measurements("table2.csv"):
        flags = "".join(row[k] for k in ("read", "memcpy", "compute", "write"))
        cfg = JacobiConfig("initial", int(a["table2_nx"]), int(a["table2_ny"]), it2, ablation=flags)
        out.append(Target("table2", flags, _jacobi(cfg), _seconds(n2, it2, float(row["gpt_s"]))))
    for name, order in (("table3", AccessOrder.CONTIGUOUS), ("table4", AccessOrder.COLUMN_MAJOR)):
        for row in measurements(f"{name}.csv"):
            b = int(row["batch_size"])
            for direction in ("read", "write"):
                for sync, col in ((SyncMode.PER_ROW, "nosync"), (SyncMode.PER_ACCESS, "sync")):
                    cfg = StreamConfig(batch_size=b, sync_mode=sync, access_order=order, direction=direction)
                    out.append(Target(name, f"{direction}_{col}@{b}", _stream(cfg),
                                      float(row[f"{direction}_{col}_s"])))
    out.append(Target("memcpy", "via_local_buffer", _stream(StreamConfig(route=Route.VIA_LOCAL_BUFFER_MEMCPY)),
                      a["memcpy_route_runtime"]))
    for row in measurements("table5.csv"):
        r = int(row["replication"])
        out.append(Target("table5", f"r{r}", _stream(StreamConfig(replication=r)), float(row["runtime_s"])))
    for row in measurements("table6.csv"):
        page = None if row["page_size"] == "none" else int(row["page_size"])
        for col, r in (("r0_s", 1), ("r8_s", 8), ("r16_s", 16), ("r32_s", 32)):
            cfg = StreamConfig(replication=r, placement=SingleBank(0) if page is None else Interleaved(page))
            out.append(Target("table6", f"{row['page_size']}/{col[:-2]}", _stream(cfg), float(row[col])))
    for row in measurements("table7.csv"):
        page = None if row["page_size"] == "none" else int(row["page_size"])
        for c in (1, 2, 4, 8):
            cfg = StreamConfig(cores=c, placement=SingleBank(0) if page is None else Interleaved(page))
            # interleaved multi-core rows stop scaling in a way per-bank service cannot follow
            out.append(Target("table7", f"{row['page_size']}/c{c}", _stream(cfg), float(row[f"c{c}_s"]),
                              fit=page is None or c == 1, weight=TABLE7_WEIGHT if page is None else 1.0))
    nx, ny, it8 = int(a["table8_nx"]), int(a["table8_ny"]), int(a["table8_iterations"])
    for row in measurements("table8.csv"):
        if row["type"] != "e150":
            continue
        cores = int(row["total_cores"])
        cy, cx = TABLE8_GEOMETRY_FIX.get(cores, (int(row["cores_y"]), int(row["cores_x"])))
        out.append(Target("table8", f"{cores}cores", _jacobi(*table8_configs(cy, cx, nx, ny, it8)),
                          _seconds(nx * ny, it8, float(row["gpt_s"])), fit=cores in TABLE8_FITTED,
                          weight=TABLE8_WEIGHT))
    return out


# -- the fit --

def _vector(p: CostParams) -> np.ndarray:
    d = p.to_dict()
    return np.log(np.maximum([d[k] for k in FITTED], FLOOR))


def _params(x: np.ndarray, base: CostParams) -> CostParams:
    d = base.to_dict()
    d.update(zip(FITTED, np.exp(x).tolist()))
    return CostParams.loads("".join(f"{k}={v!r}\n" for k, v in d.items()))


def _constraints(jac: np.ndarray, labels: Sequence[str]) -> dict[str, list[str]]:
    out = {}
    for j, name in enumerate(FITTED):
        out[name] = [labels[i] for i in np.flatnonzero(np.abs(jac[:, j]) >= SENSITIVITY)]
    return out


def calibrate(rows: Optional[Sequence[Target]] = None, start: Optional[CostParams] = None, *,
              max_nfev: int = 400) -> CalibrationReport:
    """Fit every coefficient but power to the ``fit`` rows of ``rows``.

    The search starts from ``start``, by default the ``CostParams`` field
    defaults, so the result does not depend on the checked-in file.
    """
    rows = list(rows) if rows is not None else targets()
    fit_rows = [t for t in rows if t.fit]
    if not fit_rows:
        raise FitDiverged("no rows to fit")
    bad = [f"{t.table}:{t.label}" for t in fit_rows if not (np.isfinite(t.measured_s) and t.measured_s > 0)]
    if bad:
        raise FitDiverged(f"measurements must be positive and finite: {', '.join(bad)}")
    base = start or CostParams()
    measured = np.log([t.measured_s for t in fit_rows])
    weights = np.array([t.weight for t in fit_rows])

    def resid(x):
        p = _params(x, base)
        return weights * (np.log([t.predict(p) for t in fit_rows]) - measured)

    x0 = _vector(base)
    lo = np.full_like(x0, np.log(FLOOR))
    hi = np.full_like(x0, np.log(1e12))
    try:
        with np.errstate(all="raise"):
            res = least_squares(resid, x0, bounds=(lo, hi), method="trf", x_scale=1.0,
                                diff_step=1e-4, max_nfev=max_nfev)
    except (FloatingPointError, ValueError, ZeroDivisionError) as exc:
        raise FitDiverged(f"residuals became non-finite: {exc}") from exc
    if res.status < 0 or not np.all(np.isfinite(res.fun)):
        raise FitDiverged(res.message)
    fitted = _params(res.x, base)
    report_rows = [Residual(t.table, t.label, t.predict(fitted), t.measured_s, t.fit) for t in rows]
    labels = [f"{t.table}:{t.label}" for t in fit_rows]
    return CalibrationReport(fitted, report_rows, _constraints(res.jac, labels),
                             f"scipy least_squares (trf) on log runtime, {len(FITTED)} log-coefficients, "
                             f"{len(fit_rows)} rows", float(res.cost), int(res.nfev))


def evaluate(params: CostParams, rows: Optional[Sequence[Target]] = None) -> list[Residual]:
    """Residuals of ``params`` without fitting."""
    rows = list(rows) if rows is not None else targets()
    return [Residual(t.table, t.label, t.predict(params), t.measured_s, t.fit) for t in rows]


__all__ = ["FITTED", "FitDiverged", "Target", "Residual", "CalibrationReport", "targets", "anchors",
           "calibrate", "evaluate", "measurements", "table8_configs"]
