"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from qflow.cli import main
from qflow.flow import FlowConfig, fci_energy, run_qflow, run_subflow
from qflow.hamiltonian import build_matrix
from qflow.integrals import load, parse_fcidump, serialize_fcidump
from qflow.models import combine_fragments, random_store, two_level_fragment
from qflow.oracle import ground_state
from qflow.verify import run_suites, trotter_deviations

FIX = Path(__file__).parent / "fixtures"


def worst(checks):
    return max(c.value for c in checks)


def test_c01_ses_eigen_relation(acceptance_report):
    t0 = time.perf_counter()
    checks = run_suites(seed=0, instances=10, properties=["ses"])
    elapsed = time.perf_counter() - t0
    ok = all(c.passed for c in checks) and len(checks) == 10 and elapsed <= 60
    acceptance_report(1, "ses", ok, f"max residual {worst(checks):.2e} (<= 1e-9), 10 models, {elapsed:.1f} s")
    assert ok


def test_c02_equivalence(acceptance_report):
    t0 = time.perf_counter()
    checks = run_suites(seed=0, instances=5, properties=["equivalence"])
    elapsed = time.perf_counter() - t0
    resid = max(c.value for c in checks if c.metric == "q_residual")
    gap = max(c.value for c in checks if c.metric == "energy_gap")
    ok = all(c.passed for c in checks) and elapsed <= 120
    acceptance_report(2, "equivalence", ok, f"Q residual {resid:.2e} (<= 1e-7), energy gap {gap:.2e} (<= 1e-9), {elapsed:.1f} s")
    assert ok


def test_c03_variational_bound(acceptance_report):
    checks = run_suites(seed=0, instances=10, properties=["variational"])
    margin = min(c.value for c in checks)
    ok = all(c.passed for c in checks) and len(checks) == 10
    acceptance_report(3, "variational", ok, f"lowest recorded energy - E_FCI = {margin:.2e} (>= -1e-10)")
    assert ok


def test_c04_gradient_fidelity(acceptance_report):
    checks = run_suites(seed=0, instances=10, properties=["gradient"])
    samples = 10 * len(checks)
    ok = all(c.passed for c in checks) and samples >= 100
    acceptance_report(4, "gradient", ok, f"max relative error {worst(checks):.2e} (<= 1e-6) over {samples} samples")
    assert ok


def test_c05_trotter_decay(acceptance_report):
    ratios = []
    for seed in range(5):
        dev = trotter_deviations(seed)
        ratios += [b / a for a, b in zip(dev, dev[1:])]
    dev_max = max(abs(r - 0.5) for r in ratios)
    ok = dev_max <= 0.1
    acceptance_report(5, "trotter", ok, f"ratios {min(ratios):.3f}..{max(ratios):.3f} (0.5 +- 20%), 5 pairs")
    assert ok


def _size_gap(fragment):
    cfg = FlowConfig(ne=2, no=2, cycles_max=3000, energy_tol=1e-14)
    single = run_qflow(cfg, fragment).energy
    double = run_qflow(cfg, combine_fragments(fragment, fragment)).energy
    return abs(double - 2 * single)


def test_c06_size_consistency(acceptance_report):
    fragments = [two_level_fragment()] + [random_store(2, 2, seed=s, coupling=0.2) for s in range(3)]
    gaps = [_size_gap(f) for f in fragments]
    ok = max(gaps) <= 1e-8
    acceptance_report(6, "size-consistency", ok, f"max |E(A+A) - 2 E(A)| {max(gaps):.2e} (<= 1e-8), 4 fragments")
    assert ok


def test_c06_size_consistency_multi_space_fragment(acceptance_report):
    """Fragments spanning several spaces: the gap is the Trotter split of the main space.

    The other fragment enters the reported energy through one exponential
    while a lone fragment's main energy uses the split product, so exact
    agreement is not expected; the gap must stay at the Trotter-error scale.
    """
    gap = _size_gap(random_store(3, 2, seed=0))
    ok = gap <= 1e-6
    acceptance_report(6, "size (3-orbital)", ok, f"informational: gap {gap:.2e} (Trotter-limited, <= 1e-6)")
    assert ok


def test_c07_subflow_consistency(acceptance_report):
    base = dict(ne=2, no=2, cycles_max=60, energy_tol=1e-10)
    bitwise, monotone, worst_rise = True, True, 0.0
    for seed in range(3):
        h = build_matrix(*_store_and_sector(random_store(6, 4, seed=seed)))
        full = run_qflow(FlowConfig(**base), h)
        m = full.total_spaces
        gaps = []
        for k in range(m + 1):
            sub = run_subflow(FlowConfig(mode="subflow", select_topk=k, **base), h)
            gaps.append(abs(sub.energy - full.energy))
            if k == m:
                bitwise &= sub.energy == full.energy and sub.cycle_energies == full.cycle_energies
        rises = [b - a for a, b in zip(gaps, gaps[1:])]
        worst_rise = max(worst_rise, max(rises))
        monotone &= all(r <= 1e-10 for r in rises)
    ok = bitwise and monotone
    acceptance_report(7, "subflow", ok, f"K=M bitwise {bitwise}, largest rise in |dE| over K {worst_rise:.2e} (<= 1e-10), 3 models")
    assert ok


def _store_and_sector(store):
    return store, store.orbitals().sector()


@pytest.mark.slow
def test_c08_parameter_accounting(tmp_path, acceptance_report, capsys):
    out = tmp_path / "shape"
    code = main(["run", "--in", str(FIX / "shape_9o8e.fcidump"), "--mode", "qflow", "--ne", "4", "--no", "4",
                 "--cycles", "1", "--out", str(out)])
    capsys.readouterr()
    summary = json.loads((out / "summary.json").read_text())
    total = summary["internal_excitations_total"]
    ok = code == 0 and summary["total_spaces"] == 60
    acceptance_report(
        8, "parameters", ok,
        f"spaces {summary['total_spaces']}, flow parameters {summary['parameters_optimized']} (ranks 1-3), "
        f"unique internal excitations {total} by rank {summary['internal_excitations_by_rank']} vs 1100 quoted",
    )
    assert ok
    assert summary["parameters_optimized"] == 1040
    assert total == 1100


def test_c09_perturbation_oracle(acceptance_report):
    checks = run_suites(seed=0, instances=10, properties=["e2"])
    ok = all(c.passed for c in checks) and len(checks) == 10
    acceptance_report(9, "e2-oracle", ok, f"max |E2 - E2_RS| {worst(checks):.2e} (<= 1e-10), 10 models")
    assert ok


def test_c10_fixture_round_trip(acceptance_report):
    files = sorted(FIX.glob("*.fcidump"))
    ok = bool(files)
    for path in files:
        store = parse_fcidump(path.read_text())
        text = serialize_fcidump(store)
        again = parse_fcidump(text)
        same = (
            np.array_equal(store.h, again.h) and np.array_equal(store.g, again.g)
            and store.e_core == again.e_core and (store.n_orb, store.n_elec, store.ms2) == (again.n_orb, again.n_elec, again.ms2)
        )
        ok &= same and serialize_fcidump(again) == text and serialize_fcidump(store) == text
    acceptance_report(10, "io", ok, f"{len(files)} fixtures: parse/serialize equality and stable bytes")
    assert ok


H8_ENV = "QFLOW_H8_FCIDUMP"


@pytest.mark.skipif(not os.environ.get(H8_ENV), reason=f"set {H8_ENV} to a 9-orbital downfolded H8 FCIDUMP")
@pytest.mark.slow
def test_c11_h8_numeric_hook(tmp_path, acceptance_report, capsys):
    path = os.environ[H8_ENV]
    out = tmp_path / "h8"
    code = main(["run", "--in", path, "--mode", "qflow", "--ne", "4", "--no", "4", "--out", str(out)])
    capsys.readouterr()
    energy = json.loads((out / "summary.json").read_text())["energy"]
    store = load(path)
    h = build_matrix(store, store.orbitals().sector())
    e_ed, _ = ground_state(h.matrix, h.basis.index(store.orbitals().reference()))
    gap = energy - e_ed
    ok = code == 0 and abs(gap) <= 5e-3
    acceptance_report(11, "h8-hook", ok, f"E_qflow - E_ED = {gap * 1e3:.3f} mHartree (<= 5)")
    assert ok
