import csv
import io
import json
from importlib import resources

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from tensix_sim import cli
from tensix_sim.calibration import FitDiverged
from tensix_sim.jacobi import Domain, GridFile, reference_solve
from tensix_sim.tensix import Deadlock


def write_config(tmp_path, text, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


# -- solve --

def test_solve_reference_writes_grid(tmp_path, capsys):
    cfg = write_config(tmp_path, "[domain]\nnx=32\nny=32\n[kernel]\nvariant=reference\niterations=1\n")
    assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 0
    g = GridFile.load(tmp_path / "o" / "grid.bin")
    assert (g.nx, g.ny, g.iterations) == (32, 32, 1)
    assert np.array_equal(g.bits, reference_solve(Domain(32, 32), 1))
    assert "GPt/s=n/a" in capsys.readouterr().out


def test_solve_optimized_matches_reference_file(tmp_path, capsys):
    base = "[domain]\nnx=512\nny=512\n[kernel]\niterations=100\ncores=1\nvariant="
    assert run("solve", "--config", write_config(tmp_path, base + "optimized\n", "a.ini"),
               "--out", tmp_path / "opt") == 0
    out = capsys.readouterr().out
    assert out.startswith("GPt/s=") and "energy_J=" in out
    assert run("solve", "--config", write_config(tmp_path, base + "reference\n", "b.ini"),
               "--out", tmp_path / "ref") == 0
    assert (tmp_path / "opt" / "grid.bin").read_bytes() == (tmp_path / "ref" / "grid.bin").read_bytes()
    report = json.loads((tmp_path / "opt" / "report.json").read_text())
    assert report["faults"] == [] and report["virtual_seconds"] > 0


def test_solve_csv_and_core_grid(tmp_path):
    cfg = write_config(tmp_path, "[domain]\nnx=64\nny=64\ninit=0.5\n[kernel]\nvariant=initial\niterations=2\n"
                                 "cores_x=2\ncores_y=2\n")
    assert run("solve", "--config", cfg, "--out", tmp_path, "--csv") == 0
    rows = (tmp_path / "grid.csv").read_text().splitlines()
    assert len(rows) == 66 and len(rows[0].split(",")) == 66
    g = GridFile.load(tmp_path / "grid.bin")
    assert np.array_equal(g.bits, reference_solve(Domain(64, 64, init=0.5), 2))


def test_same_manifest_gives_identical_artifacts(tmp_path):
    cfg = write_config(tmp_path, "[domain]\nnx=64\nny=32\n[kernel]\nvariant=initial\niterations=3\n"
                                 "[bench]\nbatch_size=1024,4096\nheight=64\n")
    for sub in ("solve", "bench"):
        run(sub, "--config", cfg, "--out", tmp_path / "a", "--seed", 3)
        run(sub, "--config", cfg, "--out", tmp_path / "b", "--seed", 3)
    for name in ("grid.bin", "report.json", "bench.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


manifests = st.fixed_dictionaries({
    "nx": st.sampled_from([32, 64]), "ny": st.sampled_from([32, 64]),
    "variant": st.sampled_from(["initial", "optimized", "reference"]),
    "iterations": st.integers(1, 3), "cores": st.sampled_from([1, 2]),
    "init": st.floats(-2, 2, width=16), "batch": st.sampled_from(["512", "1024,2048"]),
    "seed": st.integers(0, 5),
})


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(m=manifests)
def test_manifest_determinism_property(tmp_path_factory, m):
    """Two runs of one manifest write byte-identical artifacts."""
    d = tmp_path_factory.mktemp("m")
    cfg = write_config(d, f"[domain]\nnx={m['nx']}\nny={m['ny']}\ninit={m['init']}\n"
                          f"[kernel]\nvariant={m['variant']}\niterations={m['iterations']}\ncores={m['cores']}\n"
                          f"[bench]\nbatch_size={m['batch']}\nheight=32\nwidth=512\n")
    for run_dir in ("a", "b"):
        assert run("solve", "--config", cfg, "--out", d / run_dir, "--seed", m["seed"], "--csv") == 0
        assert run("bench", "--config", cfg, "--out", d / run_dir, "--seed", m["seed"]) == 0
    names = sorted(p.name for p in (d / "a").iterdir())
    assert names == sorted(p.name for p in (d / "b").iterdir())
    for name in names:
        assert (d / "a" / name).read_bytes() == (d / "b" / name).read_bytes()


def test_cost_overrides_apply(tmp_path, capsys):
    base = "[domain]\nnx=64\nny=64\n[kernel]\nvariant=initial\niterations=2\n"
    run("solve", "--config", write_config(tmp_path, base, "a.ini"), "--out", tmp_path / "a")
    run("solve", "--config", write_config(tmp_path, base + "[cost]\ntileop_ns=5000\ninterleave_factor_4096=2\n",
                                          "b.ini"), "--out", tmp_path / "b")
    slow, fast = (json.loads((tmp_path / d / "report.json").read_text())["virtual_seconds"] for d in "ba")
    assert slow > fast


# -- dry runs --

@pytest.mark.parametrize("sub", ["solve", "bench", "ablate", "calibrate", "report"])
def test_dry_run_prints_configuration_only(tmp_path, capsys, sub):
    out_dir = tmp_path / "o"
    assert run(sub, "--dry-run", "--out", out_dir) == 0
    resolved = json.loads(capsys.readouterr().out)
    assert isinstance(resolved, dict) and resolved
    assert not out_dir.exists()


def test_dry_run_shows_resolved_bench_grid(tmp_path, capsys):
    cfg = write_config(tmp_path, "[bench]\nbatch_size=1024,2048\nsync_mode=PerAccess,per_row\n")
    assert run("bench", "--config", cfg, "--dry-run") == 0
    cells = json.loads(capsys.readouterr().out)["cells"]
    assert len(cells) == 4
    assert {c["sync_mode"] for c in cells} == {"PerAccess", "PerRow"}


# -- exit codes --

@pytest.mark.parametrize("sub,text", [
    ("solve", "[nonsense]\nx=1\n"),
    ("solve", "[domain]\nwidth=3\n"),
    ("solve", "[domain]\nnx=0\n"),
    ("solve", "[kernel]\nvariant=turbo\n"),
    ("solve", "[kernel]\nablation=YYY\n"),
    ("solve", "[kernel]\niterations=-1\nvariant=reference\n"),
    ("solve", "[kernel]\ndouble_buffer=maybe\n"),
    ("solve", "[cost]\nwarp_speed=9\n"),
    ("solve", "[cost]\ninterleave_factor_3000=1\n"),
    ("bench", "[bench]\nsync_mode=sometimes\n"),
    ("bench", "[bench]\nbatch_size=3\n"),
    ("bench", "[bench]\npreset=table99\n"),
    ("ablate", "[kernel]\nablation=NNNN,QQQQ\n"),
    ("solve", "not an ini file"),
])
def test_configuration_errors_exit_2(tmp_path, sub, text):
    assert run(sub, "--config", write_config(tmp_path, text), "--out", tmp_path / "o") == 2


def test_missing_config_exits_2(tmp_path):
    assert run("solve", "--config", tmp_path / "missing.ini") == 2
    assert run("solve", "--params", tmp_path / "missing.txt") == 2


def test_usage_errors_exit_2(tmp_path):
    assert run("frobnicate") == 2
    assert run() == 2
    assert run("bench", "--preset", "table99") == 2
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("report", "--out", blocker) == 2


def test_help_exits_0(capsys):
    assert run("--help") == 0


def test_unaligned_device_write_exits_1(tmp_path, capsys):
    cfg = write_config(tmp_path, "[domain]\nnx=64\nny=32\npadded=no\n[kernel]\nvariant=initial\n")
    assert run("solve", "--config", cfg, "--out", tmp_path) == 1
    assert "UnalignedWrite" in capsys.readouterr().err


@pytest.mark.parametrize("exc", [Deadlock(5.0, {"core0.reader": "cb0.wait_front"}), FitDiverged("nan")])
def test_simulator_failures_exit_1(monkeypatch, exc):
    def boom(m, cp):
        raise exc

    monkeypatch.setitem(cli.COMMANDS, "calibrate", boom)
    assert run("calibrate") == 1


# -- bench, ablate, calibrate, report --

def test_ablate_all_off(tmp_path):
    cfg = write_config(tmp_path, "[kernel]\nablation=NNNN\n")
    assert run("ablate", "--config", cfg, "--out", tmp_path) == 0
    (row,) = read_csv(tmp_path / "ablate.csv")
    assert row["ablation"] == "NNNN"
    assert 7.574 / 2 <= float(row["gpt_s"]) <= 7.574 * 2


def test_ablate_default_rows(tmp_path):
    assert run("ablate", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "ablate.csv")
    assert [r["ablation"] for r in rows] == ["NNNN", "NNYN", "NNNY", "YNNN", "NYNN", "YYNN"]


def test_bench_table3_preset(tmp_path, capsys):
    assert run("bench", "--preset", "table3", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "bench.csv")
    assert len(rows) == 52
    assert capsys.readouterr().out == (tmp_path / "bench.csv").read_text()
    reads = [r for r in rows if r["direction"] == "read" and r["sync_mode"] == "PerRow"]
    assert len(reads) == 13 and all(r["write_runtime_s"] == "" for r in reads)


def test_calibrate_writes_params_and_residuals(tmp_path, monkeypatch, calibration_report):
    monkeypatch.setattr(cli, "calibrate", lambda start=None: calibration_report)
    assert run("calibrate", "--out", tmp_path) == 0
    bundled = resources.files("tensix_sim.data").joinpath("params.txt").read_text()
    assert (tmp_path / "params.txt").read_text() == bundled
    rows = read_csv(tmp_path / "residuals.csv")
    nosync = [r for r in rows if r["table"] == "table3" and "nosync" in r["row"]]
    assert len(nosync) == 26
    assert all(0.5 <= float(r["ratio"]) <= 2.0 for r in nosync)
    assert "coefficients:" in (tmp_path / "calibration.txt").read_text()


def test_report_energy_audit(tmp_path, capsys):
    assert run("report", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "report.csv")
    assert len(rows) == 10
    assert all(r["in_band"] == "True" for r in rows)
    assert "10/10 rows within 45-56 W" in capsys.readouterr().out
    one = next(r for r in rows if r["type"] == "e150" and r["total_cores"] == "1")
    assert float(one["model_gpt_s"]) > 0
