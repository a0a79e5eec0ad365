"""Command-line entry point: ``tensix-sim {solve,bench,ablate,calibrate,report}``.

Configuration files are INI style with the sections ``domain``, ``kernel``,
``cost`` and ``bench``. Keys in ``cost`` override single coefficients of the
parameter set. In ``bench`` a comma-separated value becomes a sweep axis.

Exit status: 0 success, 1 simulator or fit failure, 2 usage or configuration
error. Outputs carry no timestamps, so the same manifest gives identical files.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from . import analytic, bench
from .calibration import FitDiverged, anchors, calibrate, table8_configs, targets, measurements
from .cb import CBError
from .cost import CostParams, default_params, gpt_per_s
from .dram import DramError
from .jacobi import Domain, initial_kernel, optimized_kernel, reference_solve
from .jacobi.gridio import GridFile
from .noc import NocError
from .numerics import NumericsError
from .tensix import Ablation, SimError

EXIT_OK, EXIT_SIM, EXIT_USAGE = 0, 1, 2
SECTIONS = ("domain", "kernel", "cost", "bench")
POWER_BAND_W = (45.0, 56.0)
SIM_ERRORS = (SimError, NocError, CBError, NumericsError, DramError, FitDiverged)


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    subcommand: str
    config_path: Optional[Path]
    params_path: Optional[Path]
    output_dir: Path
    seed: int = 0
    dry_run: bool = False
    preset: Optional[str] = None
    write_csv: bool = False

    def __post_init__(self):
        for p in (self.config_path, self.params_path):
            if p is not None and not p.is_file():
                raise UsageError(f"no such file: {p}")
        if self.output_dir.exists() and not (self.output_dir.is_dir() and os.access(self.output_dir, os.W_OK)):
            raise UsageError(f"output directory not writable: {self.output_dir}")


# -- configuration --

def load_config(path: Optional[Path]) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    if path is not None:
        try:
            cp.read_string(path.read_text(), source=str(path))
        except configparser.Error as exc:
            raise UsageError(f"{path}: {exc}") from exc
    unknown = set(cp.sections()) - set(SECTIONS)
    if unknown:
        raise UsageError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    for s in SECTIONS:
        if not cp.has_section(s):
            cp.add_section(s)
    return cp


def _check_keys(section: configparser.SectionProxy, allowed: Sequence[str]) -> None:
    extra = set(section) - set(allowed)
    if extra:
        raise UsageError(f"[{section.name}] unknown key(s): {', '.join(sorted(extra))}")


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "yes", "true", "on", "y"):
        return True
    if t in ("0", "no", "false", "off", "n"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def resolve_params(m: RunManifest, cp: configparser.ConfigParser) -> CostParams:
    params = CostParams.load(m.params_path) if m.params_path else default_params()
    overrides = dict(cp["cost"])
    known = params.to_dict()
    for k in overrides:
        if k not in known:
            raise UsageError(f"[cost] unknown coefficient {k!r}")
    return params.replace(**{k: float(v) for k, v in overrides.items()}) if overrides else params


DOMAIN_KEYS = ("nx", "ny", "left", "right", "top", "bottom", "init", "padded")
KERNEL_KEYS = ("variant", "iterations", "cores", "cores_x", "cores_y", "double_buffer", "write_sync",
               "aligned_reads", "placement", "ablation")


def resolve_domain(cp: configparser.ConfigParser) -> Domain:
    s = cp["domain"]
    _check_keys(s, DOMAIN_KEYS)
    return Domain(int(s.get("nx", "32")), int(s.get("ny", "32")), left=float(s.get("left", "1.0")),
                  right=float(s.get("right", "0.0")), top=float(s.get("top", "0.0")),
                  bottom=float(s.get("bottom", "0.0")), init=float(s.get("init", "0.0")),
                  padded=_bool(s.get("padded", "yes")))


def resolve_kernel(cp: configparser.ConfigParser) -> dict:
    s = cp["kernel"]
    _check_keys(s, KERNEL_KEYS)
    variant = s.get("variant", "optimized")
    if variant not in ("reference", "initial", "optimized"):
        raise UsageError(f"[kernel] variant must be reference, initial or optimized, not {variant!r}")
    cores = int(s.get("cores", "1"))
    cx, cy = s.get("cores_x"), s.get("cores_y")
    grid = (int(cx or 1), int(cy or cores // int(cx or 1))) if (cx or cy) else None
    if grid and grid[0] * grid[1] != cores:
        cores = grid[0] * grid[1]
    return {
        "variant": variant, "iterations": int(s.get("iterations", "1")), "cores": cores, "cores_xy": grid,
        "double_buffer": _bool(s.get("double_buffer", "yes")), "write_sync": s.get("write_sync", "batch"),
        "aligned_reads": _bool(s.get("aligned_reads", "yes")),
        "placement": bench.parse_placement(s.get("placement", "none")),
        "ablation": Ablation.from_flags(s.get("ablation", "YYYY")),
    }


# -- subcommands --

def _write(path: Path, data) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data)


def _save_grid(m: RunManifest, g: GridFile) -> None:
    _write(_out(m, "grid.bin"), g.to_bytes())
    if m.write_csv:
        _write(_out(m, "grid.csv"), g.to_csv())


def _dry(m: RunManifest, resolved: dict) -> int:
    print(json.dumps(resolved, indent=2, sort_keys=True, default=str))
    return EXIT_OK


def cmd_solve(m: RunManifest, cp: configparser.ConfigParser) -> int:
    dom = resolve_domain(cp)
    k = resolve_kernel(cp)
    params = resolve_params(m, cp)
    if m.dry_run:
        return _dry(m, {"domain": dataclasses.asdict(dom), "kernel": k, "params": params.to_dict()})
    if k["variant"] == "reference":
        grid = reference_solve(dom, k["iterations"])
        _save_grid(m, GridFile(dom.nx, dom.ny, k["iterations"], grid))
        print("GPt/s=n/a, energy_J=n/a (host reference)")
        return EXIT_OK
    common = dict(params=params, ablation=k["ablation"], placement=k["placement"], cores_xy=k["cores_xy"])
    if k["variant"] == "initial":
        res = initial_kernel(dom, k["iterations"], k["cores"], double_buffer=k["double_buffer"],
                             write_sync=k["write_sync"], aligned_reads=k["aligned_reads"], **common)
    else:
        res = optimized_kernel(dom, k["iterations"], k["cores"], **common)
    _save_grid(m, GridFile(dom.nx, dom.ny, k["iterations"], res.grid))
    _write(_out(m, "report.json"), res.report.to_json() + "\n")
    rate = res.gpt_s
    print(f"GPt/s={rate:.6g}, energy_J={res.report.energy_joules:.6g}")
    return EXIT_OK


BENCH_KEYS = ("preset", "budget", "seed") + tuple(f.name for f in dataclasses.fields(bench.StreamConfig))
_ENUMS = {"sync_mode": bench.SyncMode, "access_order": bench.AccessOrder, "route": bench.Route}


def _stream_value(name: str, text: str):
    text = text.strip()
    if name in _ENUMS:
        enum = _ENUMS[name]
        for member in enum:
            if text.lower() in (member.value.lower(), member.name.lower()):
                return member
        raise UsageError(f"[bench] {name}: unknown value {text!r}")
    if name == "placement":
        return bench.parse_placement(text)
    if name == "direction":
        return text
    return int(text)


def resolve_bench(m: RunManifest, cp: configparser.ConfigParser) -> tuple[list, int]:
    s = cp["bench"]
    _check_keys(s, BENCH_KEYS)
    budget = int(s.get("budget", str(bench.DEFAULT_BUDGET)))
    preset = m.preset or s.get("preset")
    seed = m.seed if m.seed else int(s.get("seed", "0"))
    if preset:
        try:
            cells = bench.preset(preset)
        except KeyError as exc:
            raise UsageError(str(exc)) from exc
    else:
        axes = {k: [_stream_value(k, v) for v in s[k].split(",")] for k in s
                if k not in ("preset", "budget", "seed")}
        cells = bench.grid(bench.StreamConfig(), **axes)
    cells = [dataclasses.replace(c, seed=seed) if isinstance(c, bench.StreamConfig) else c for c in cells]
    return cells, budget


def _rows(cells, params, budget) -> list:
    out = []
    for c in cells:
        if isinstance(c, bench.StreamConfig):
            r = bench.run_stream(c, params, budget=budget)
            t = r.virtual_seconds
            out.append(bench.SweepRow(c.to_row(), t if c.direction == "read" else None,
                                      t if c.direction == "write" else None,
                                      gpt_per_s(c.width * c.height, 1, t), r.energy_joules, r.faults))
        else:
            out.append(bench.evaluate(c, params))
    return out


def cmd_bench(m: RunManifest, cp: configparser.ConfigParser) -> int:
    params = resolve_params(m, cp)
    cells, budget = resolve_bench(m, cp)
    if m.dry_run:
        return _dry(m, {"cells": [c.to_row() for c in cells], "budget": budget, "params": params.to_dict()})
    rows = _rows(cells, params, budget)
    text = bench.to_csv(rows)
    _write(_out(m, "bench.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(m: RunManifest, cp: configparser.ConfigParser) -> int:
    params = resolve_params(m, cp)
    s = cp["kernel"]
    d = cp["domain"]
    _check_keys(d, DOMAIN_KEYS)
    a = anchors()
    nx = int(d.get("nx", str(int(a["table2_nx"]))))
    ny = int(d.get("ny", str(int(a["table2_ny"]))))
    iterations = int(s.get("iterations", str(int(a["table2_iterations"]))))
    flags = [f.strip() for f in s.get("ablation", ",".join(bench.TABLE2_FLAGS)).split(",")]
    for f in flags:
        Ablation.from_flags(f)
    cells = [bench.JacobiConfig("initial", nx, ny, iterations, ablation=f) for f in flags]
    if m.dry_run:
        return _dry(m, {"cells": [c.to_row() for c in cells], "params": params.to_dict()})
    text = bench.to_csv([bench.evaluate(c, params) for c in cells])
    _write(_out(m, "ablate.csv"), text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_calibrate(m: RunManifest, cp: configparser.ConfigParser) -> int:
    start = CostParams.load(m.params_path) if m.params_path else None
    if m.dry_run:
        rows = targets()
        return _dry(m, {"rows": len(rows), "fitted_rows": sum(t.fit for t in rows),
                        "start": (start or CostParams()).to_dict()})
    report = calibrate(start=start)
    _write(_out(m, "params.txt"), report.params.dumps())
    _write(_out(m, "residuals.csv"), report.residuals_csv())
    _write(_out(m, "calibration.txt"), report.summary())
    sys.stdout.write(report.summary())
    return EXIT_OK


def energy_audit() -> list[dict]:
    """Board power implied by each accelerator row of Table 8.

    power = energy x rate / (points x iterations), with the rate in points per
    second. Multi-board rows ("e150 x N") are divided by N so the band applies
    per card. Rows come straight from the bundled measurements.
    """
    a = anchors()
    work = a["table8_nx"] * a["table8_ny"] * a["table8_iterations"]
    out = []
    for row in measurements("table8.csv"):
        kind = row["type"]
        if not kind.startswith("e150"):
            continue
        boards = int(kind.split("x")[1]) if "x" in kind else 1
        rate, joules = float(row["gpt_s"]), float(row["energy_j"])
        watts = joules * rate * 1e9 / work
        per_board = watts / boards
        out.append({"type": kind, "total_cores": int(row["total_cores"]), "boards": boards, "gpt_s": rate,
                    "energy_j": joules, "power_w": watts, "power_per_board_w": per_board,
                    "in_band": POWER_BAND_W[0] <= per_board <= POWER_BAND_W[1]})
    return out


def cmd_report(m: RunManifest, cp: configparser.ConfigParser) -> int:
    params = resolve_params(m, cp)
    if m.dry_run:
        return _dry(m, {"band_w": POWER_BAND_W, "params": params.to_dict()})
    a = anchors()
    nx, ny, it = int(a["table8_nx"]), int(a["table8_ny"]), int(a["table8_iterations"])
    rows = energy_audit()
    geometry = {total: (cy, cx) for total, cy, cx in bench.TABLE8_GEOMETRY}
    for r in rows:
        model = None
        if r["type"] == "e150" and r["total_cores"] in geometry:
            cy, cx = geometry[r["total_cores"]]
            secs = min(analytic.jacobi_seconds(c, params) for c in table8_configs(cy, cx, nx, ny, it))
            model = gpt_per_s(nx * ny, it, secs)
        r["model_gpt_s"] = model
    out = io.StringIO()
    keys = ["type", "total_cores", "boards", "gpt_s", "energy_j", "power_w", "power_per_board_w", "in_band",
            "model_gpt_s"]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(keys)
    for r in rows:
        w.writerow(["" if r[k] is None else (f"{r[k]:.6g}" if isinstance(r[k], float) else r[k]) for k in keys])
    _write(_out(m, "report.csv"), out.getvalue())
    sys.stdout.write(out.getvalue())
    bad = [r for r in rows if not r["in_band"]]
    print(f"energy audit: {len(rows) - len(bad)}/{len(rows)} rows within {POWER_BAND_W[0]:g}-{POWER_BAND_W[1]:g} W")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "bench": cmd_bench, "ablate": cmd_ablate, "calibrate": cmd_calibrate,
            "report": cmd_report}


def _out(m: RunManifest, name: str) -> Path:
    return m.output_dir / name


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tensix-sim", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="INI file with domain/kernel/cost/bench sections")
        p.add_argument("--params", type=Path, help="coefficient file overriding the bundled calibration")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--dry-run", action="store_true", help="print the resolved configuration and exit")
        if name == "bench":
            p.add_argument("--preset", choices=bench.PRESETS)
        if name == "solve":
            p.add_argument("--csv", action="store_true", help="also write the grid as decimal CSV")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        m = RunManifest(args.command, args.config, args.params, args.out, args.seed, args.dry_run,
                        getattr(args, "preset", None), getattr(args, "csv", False))
        cp = load_config(m.config_path)
        return COMMANDS[m.subcommand](m, cp)
    except SIM_ERRORS as exc:
        print(f"tensix-sim: simulation failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM
    except (UsageError, ValueError, OSError, configparser.Error) as exc:
        print(f"tensix-sim: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
