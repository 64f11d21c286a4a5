import json
import subprocess
import sys
from pathlib import Path

import pytest

from qflow.cli import main
from qflow.integrals import load

FIX = Path(__file__).parent / "fixtures"
SMALL = str(FIX / "random_4o4e.fcidump")


def run(*argv):
    return main([str(a) for a in argv])


def read_artifacts(d):
    return {name: (d / name).read_bytes() for name in ("trace.csv", "trace.json", "summary.json", "config.txt")}


def test_qflow_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("run", "--in", SMALL, "--ne", 2, "--no", 2, "--cycles", 5, "--out", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["mode"] == "qflow" and summary["cycles"] == 5
    assert summary["total_spaces"] == 4
    assert summary["internal_excitations_total"] == sum(summary["internal_excitations_by_rank"].values())
    csv_lines = (out / "trace.csv").read_text().splitlines()
    assert csv_lines[0] == f"# manifest_hash={summary['manifest_hash']}"
    assert len(csv_lines) == 2 + 5 * 4
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["manifest_hash"] == summary["manifest_hash"]
    assert manifest["started"] and manifest["finished"]
    stdout = capsys.readouterr().out.splitlines()
    assert stdout[0] == 'mode\t"qflow"'
    assert sum(line.startswith("cycle\t") for line in stdout) == 5


def test_artifacts_are_byte_identical(tmp_path):
    args = ("run", "--in", SMALL, "--ne", 2, "--no", 2, "--cycles", 3)
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b") == 0
    assert read_artifacts(tmp_path / "a") == read_artifacts(tmp_path / "b")


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "flow.cfg"
    cfg.write_text("ne = 2\nno = 2\ncycles_max = 9\neta = 0.05\n")
    out = tmp_path / "o"
    assert run("run", "--in", SMALL, "--config", cfg, "--cycles", 2, "--out", out) == 0
    text = (out / "config.txt").read_text()
    assert "cycles_max = 2" in text and "eta = 0.05" in text


@pytest.mark.parametrize("extra,key", [
    (("--mode", "subflow", "--select-topk", 2), "selected_spaces"),
    (("--mode", "ccflow", "--cycles", 100, "--tol", 1e-10, "--grad-tol", 1e-10), "equivalence_residual"),
    (("--mode", "bloch", "--order", 2), "projection_energy"),
    (("--mode", "bloch", "--space", "occ:[1],virt:[2]"), "reference_overlap"),
])
def test_other_modes(tmp_path, extra, key):
    out = tmp_path / "o"
    assert run("run", "--in", SMALL, "--ne", 2, "--no", 2, "--cycles", 4, *extra, "--out", out) == 0
    assert key in json.loads((out / "summary.json").read_text())


def test_exit_codes(tmp_path, capsys):
    out = tmp_path / "o"
    assert run("run", "--in", tmp_path / "missing.fcidump", "--out", out) == 2
    bad = tmp_path / "bad.fcidump"
    bad.write_text("not an fcidump\n")
    assert run("run", "--in", bad, "--out", out) == 2
    assert run("run", "--in", SMALL, "--ne", 3, "--out", out) == 1
    assert run("run", "--in", SMALL, "--mode", "subflow", "--ne", 2, "--no", 2, "--out", out) == 1
    assert run("run", "--in", SMALL, "--mode", "subflow", "--ne", 2, "--no", 2,
               "--select-threshold", 10.0, "--out", out) == 1
    assert run("run", "--in", SMALL, "--mode", "ccflow", "--ne", 2, "--no", 2, "--cycles", 1, "--out", out) == 3
    with pytest.raises(SystemExit) as exc:
        run("run", "--in", SMALL, "--bogus", "--out", out)
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("run", "--in", SMALL, "--background", "maybe", "--out", out)
    assert exc.value.code == 1
    assert "qflow:" in capsys.readouterr().err


def test_verify_is_deterministic_and_filterable(tmp_path, capsys):
    path = tmp_path / "report.txt"
    assert run("verify", "--seed", 5, "--instances", 1, "--property", "e2", "--property", "trotter",
               "--out", path) == 0
    first = capsys.readouterr().out
    assert first == path.read_text()
    assert first.rstrip().endswith("ALL PASS")
    assert {line.split()[0] for line in first.splitlines()[2:-3]} == {"e2", "trotter"}
    assert run("verify", "--seed", 5, "--instances", 1, "--property", "e2", "--property", "trotter") == 0
    assert capsys.readouterr().out == first
    assert run("verify", "--property", "nope") == 1
    assert run("verify", "--instances", 0) == 1


@pytest.mark.parametrize("method", ["projection", "perturbative:1", "perturbative:2", "qflow"])
def test_export_heff_round_trip(tmp_path, method, capsys):
    out = tmp_path / "heff.json"
    cfg = tmp_path / "c.cfg"
    cfg.write_text("ne = 2\nno = 2\ncycles_max = 3\n")
    assert run("export-heff", "--in", SMALL, "--space", "occ:[1],virt:[2]", "--method", method,
               "--config", cfg, "--out", out) == 0
    store = load(out)
    assert store.n_orb == 2 and store.n_elec == 2
    meta = json.loads(out.read_text())
    assert meta["space"] == "occ:[1],virt:[2]"
    assert capsys.readouterr().out.startswith("exported\t")


def test_export_heff_bad_space(tmp_path):
    out = tmp_path / "heff.json"
    assert run("export-heff", "--in", SMALL, "--space", "occ:[3],virt:[2]", "--out", out) == 2
    assert run("export-heff", "--in", SMALL, "--space", "garbage", "--out", out) == 2


def test_plot_flag(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "o"
    assert run("run", "--in", SMALL, "--ne", 2, "--no", 2, "--cycles", 3, "--plot", "--out", out) == 0
    assert (out / "trace.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_console_entry_point(tmp_path):
    out = tmp_path / "o"
    proc = subprocess.run(
        [sys.executable, "-m", "qflow.cli", "run", "--in", SMALL, "--ne", "2", "--no", "2",
         "--cycles", "2", "--out", str(out)],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "manifest_hash\t" in proc.stdout
