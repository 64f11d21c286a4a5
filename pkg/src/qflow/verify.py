"""Self-generating property suites behind ``qflow verify``.

Each suite draws its instances from ``numpy.random.default_rng(seed)`` and
returns :class:`Check` rows; the report is a fixed-width table, so equal
arguments give byte-identical output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from qflow.active_space import enumerate_spaces
from qflow.cluster import GeneratorSet, all_excitations, cluster_analyze, exp_nilpotent, t_matrix, trotter_state
from qflow.downfolding import heff_ses_nonhermitian, heff_unitary_exact
from qflow.flow import (
    FlowConfig,
    commutator_gradient,
    frame_energy,
    internal_state,
    run_ccflow_nonhermitian,
    run_qflow,
)
from qflow.fock import StateVector
from qflow.hamiltonian import build_matrix, fock_diagonal
from qflow.models import random_store
from qflow.oracle import antisymmetric_expm, exact_diagonalize, rs_resolvent_order2
from qflow.perturbative import first_order_sd, mp2_energy


@dataclass(frozen=True)
class Check:
    prop: str
    instance: int
    metric: str
    value: float
    limit: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.prop:<12} {self.instance:>3} {self.metric:<22} {self.value:>11.3e} {self.limit:>10.1e}  {status}"


def _instance_seeds(seed: int, n: int) -> list[int]:
    return [int(s) for s in np.random.default_rng(seed).integers(0, 2**31 - 1, size=n)]


def _model(s: int, n_orb: int = 4, n_elec: int = 4, coupling: float = 0.1):
    store = random_store(n_orb, n_elec, seed=s, coupling=coupling)
    h = build_matrix(store, store.orbitals().sector())
    return store, h


def suite_ses(seed: int, instances: int) -> list[Check]:
    """SES eigen-relation with cluster-analyzed FCI amplitudes, every (2,2) and (1,1) space."""
    out = []
    for n, s in enumerate(_instance_seeds(seed, instances)):
        store, h = _model(s)
        orbs = store.orbitals()
        res = exact_diagonalize(h.dense(), 1)
        e, v = res.ground_energy, res.eigenvectors[:, 0]
        t = cluster_analyze(StateVector(h.basis, v), orbs.reference())
        worst = 0.0
        for space in enumerate_spaces(orbs, 2, 2) + enumerate_spaces(orbs, 1, 1):
            heff = heff_ses_nonhermitian(h, t.filter(lambda x, sp=space: not sp.contains(x)), space)
            phi = np.zeros(len(heff.basis))
            phi[0] = 1.0
            y = exp_nilpotent(t_matrix(t.filter(space.contains), heff.basis), phi)
            worst = max(worst, float(np.linalg.norm(heff.matrix @ y - e * y)))
        out.append(Check("ses", n, "max_residual", worst, 1e-9, worst <= 1e-9))
    return out


def suite_equivalence(seed: int, instances: int) -> list[Check]:
    out = []
    cfg = FlowConfig(mode="ccflow", ne=2, no=2, cycles_max=200, energy_tol=1e-13, grad_tol=1e-13)
    for n, s in enumerate(_instance_seeds(seed, instances)):
        _, h = _model(s)
        r = run_ccflow_nonhermitian(cfg, h)
        gap = abs(r.energy - r.functional_energy)
        out.append(Check("equivalence", n, "q_residual", r.residual, 1e-7, r.residual <= 1e-7))
        out.append(Check("equivalence", n, "energy_gap", gap, 1e-9, gap <= 1e-9))
    return out


def suite_variational(seed: int, instances: int) -> list[Check]:
    out = []
    cfg = FlowConfig(ne=2, no=2, cycles_max=30, energy_tol=1e-10)
    for n, s in enumerate(_instance_seeds(seed, instances)):
        _, h = _model(s)
        e_fci = exact_diagonalize(h.dense(), 1).ground_energy
        r = run_qflow(cfg, h)
        lowest = min(min(x.e_before, x.e_after) for x in r.trace.records)
        margin = lowest - e_fci
        out.append(Check("variational", n, "min_energy_above_fci", margin, -1e-10, margin >= -1e-10))
    return out


def suite_gradient(seed: int, instances: int, samples: int = 10, h_fd: float = 1e-5) -> list[Check]:
    """Commutator gradient against central differences in the rotated frame, random parameter per sample."""
    out = []
    for n, s in enumerate(_instance_seeds(seed, instances)):
        rng = np.random.default_rng(s)
        _, h = _model(s)
        orbs = h.basis.orbitals
        spaces = enumerate_spaces(orbs, 1, 1)
        ext = all_excitations(orbs, (1, 2))
        worst = 0.0
        for _ in range(samples):
            space = spaces[int(rng.integers(len(spaces)))]
            sig = GeneratorSet(ext, h.basis).matrix(0.05 * rng.normal(size=len(ext)) * [not space.contains(e) for e in ext])
            heff = heff_unitary_exact(h, sig, space, tol=1e-16)
            internal = all_excitations(orbs, (1, 2), within=space.mask)
            gens = GeneratorSet(internal, heff.basis)
            psi = internal_state(gens, 0.2 * rng.normal(size=len(internal)))
            g = commutator_gradient(heff.matrix, gens, psi)
            k = int(rng.integers(len(internal)))
            fd = (frame_energy(heff.matrix, gens, psi, k, h_fd) - frame_energy(heff.matrix, gens, psi, k, -h_fd)) / (2 * h_fd)
            worst = max(worst, abs(fd - g[k]) / abs(g[k]))
        out.append(Check("gradient", n, "max_relative_error", worst, 1e-6, worst <= 1e-6))
    return out


def trotter_deviations(seed: int, ns=(1, 2, 4, 8), scale: float = 0.3) -> list[float]:
    """``||trotter_state(N) - exp(s_int + s_ext) Phi||`` for one random pair."""
    rng = np.random.default_rng(seed)
    _, h = _model(seed)
    orbs = h.basis.orbitals
    space = enumerate_spaces(orbs, 1, 1)[int(rng.integers(4))]
    ex = all_excitations(orbs, (1, 2))
    gens = GeneratorSet(ex, h.basis)
    theta = scale * rng.normal(size=len(ex)) / np.sqrt(len(ex))
    inside = np.array([space.contains(e) for e in ex])
    s_int = gens.matrix(np.where(inside, theta, 0.0))
    s_ext = gens.matrix(np.where(inside, 0.0, theta))
    phi = np.zeros(len(h.basis))
    phi[h.basis.index(orbs.reference())] = 1.0
    exact = antisymmetric_expm((s_int + s_ext).toarray()) @ phi
    return [float(np.linalg.norm(trotter_state(s_int, s_ext, n, phi, tol=1e-15) - exact)) for n in ns]


def suite_trotter(seed: int, instances: int) -> list[Check]:
    out = []
    for n, s in enumerate(_instance_seeds(seed, instances)):
        dev = trotter_deviations(s)
        ratios = [dev[i + 1] / dev[i] for i in range(len(dev) - 1)]
        worst = max(abs(r - 0.5) for r in ratios)
        out.append(Check("trotter", n, "max_|ratio-0.5|", worst, 0.1, worst <= 0.1))
    return out


def suite_e2(seed: int, instances: int) -> list[Check]:
    out = []
    for n, s in enumerate(_instance_seeds(seed, instances)):
        store, h = _model(s)
        ref = store.orbitals().reference()
        fock = fock_diagonal(store, ref)
        e2 = mp2_energy(store, first_order_sd(store, fock))
        h0 = h.basis.occupations() @ fock.values
        v = h.dense() - np.diag(h0)
        e2_rs, _, _ = rs_resolvent_order2(h0, v, h.basis.index(ref))
        err = abs(e2 - e2_rs)
        out.append(Check("e2", n, "abs_error", err, 1e-10, err <= 1e-10))
    return out


SUITES = {
    "ses": suite_ses,
    "equivalence": suite_equivalence,
    "variational": suite_variational,
    "gradient": suite_gradient,
    "trotter": suite_trotter,
    "e2": suite_e2,
}


def run_suites(seed: int = 0, instances: int = 3, properties=None) -> list[Check]:
    names = list(SUITES) if not properties else list(properties)
    unknown = [p for p in names if p not in SUITES]
    if unknown:
        raise ValueError(f"unknown properties {unknown}; choose from {sorted(SUITES)}")
    checks = []
    for name in names:
        checks.extend(SUITES[name](seed, instances))
    return checks


def report(checks: list[Check], seed: int, instances: int) -> str:
    lines = [f"qflow verify seed={seed} instances={instances}"]
    lines.append(f"{'property':<12} {'#':>3} {'metric':<22} {'value':>11} {'limit':>10}  status")
    lines += [c.line() for c in checks]
    for prop in dict.fromkeys(c.prop for c in checks):
        rows = [c for c in checks if c.prop == prop]
        if prop == "variational":
            worst = min(c.value for c in rows)
        else:
            worst = max(c.value for c in rows)
        lines.append(f"summary {prop}: worst {worst:.3e} over {len(rows)} checks")
    failed = sum(not c.passed for c in checks)
    lines.append("ALL PASS" if not failed else f"FAILED {failed} of {len(checks)}")
    return "\n".join(lines) + "\n"
