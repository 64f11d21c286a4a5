"""Low-order perturbative cluster amplitudes with Fock-diagonal resolvents.

Diagrams implemented (spin-orbital, antisymmetrized vertices ``<pq||rs>``):

* first-order singles  ``t_i^a = f_ai / D_i^a``
* first-order doubles  ``t_ij^ab = <ab||ij> / D_ij^ab``
* second-order connected triples, one two-body vertex contracted with a
  first-order doubles line (particle and hole variants)::

      D_ijk^abc t_ijk^abc = P(i/jk) P(a/bc) [ sum_e t_jk^ae <ei||bc>
                                             - sum_m t_im^bc <ma||jk> ]

  with ``P(i/jk) f(ijk) = f(ijk) - f(jik) - f(kji)``.

``D`` denominators are sums of occupied minus virtual ``f_pp``.  Full
second-order singles and doubles (needed for ``T_ext^[2]``) are obtained
from the determinant-space Rayleigh–Schrödinger recursion and converted
to connected cluster amplitudes.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from qflow.cluster import (
    BACKGROUND,
    AmplitudeStore,
    Excitation,
    all_excitations,
    reference_sign,
    t_matrix,
)
from qflow.fock import DeterminantBasis
from qflow.hamiltonian import FockDiagonal, HamiltonianMatrix, build_matrix, fock_matrix
from qflow.integrals import IntegralStore

log = logging.getLogger(__name__)

DGEN_TOL = 1e-6


@dataclass
class DegeneracyLog:
    """Excitations skipped because of a near-zero denominator."""

    entries: list[tuple[Excitation, float]] = field(default_factory=list)

    def add(self, exc: Excitation, denom: float):
        self.entries.append((exc, denom))
        log.info("SKIP %s denom=%.3e", exc.label(), denom)

    def lines(self) -> list[str]:
        return [
            f"SKIP {e.rank} {' '.join(map(str, e.occ))}->{' '.join(map(str, e.virt))} denom={d:.6e}"
            for e, d in self.entries
        ]

    def __len__(self):
        return len(self.entries)

    def __contains__(self, exc):
        return any(e == exc for e, _ in self.entries)


def _excitations(store: IntegralStore, ranks, excitations):
    if excitations is None:
        return all_excitations(store.orbitals(), ranks)
    return [e for e in excitations if e.rank in ranks]


def first_order_sd(
    store: IntegralStore,
    fock: FockDiagonal,
    excitations=None,
    dgen_tol: float = DGEN_TOL,
    log_: DegeneracyLog | None = None,
) -> AmplitudeStore:
    """First-order singles and doubles; keys default to every S/D excitation."""
    f = fock_matrix(store, fock.reference)
    w = store.antisymmetrized
    out = AmplitudeStore()
    for exc in _excitations(store, (1, 2), excitations):
        d = fock.denominator(exc.occ, exc.virt)
        if abs(d) < dgen_tol:
            if log_ is not None:
                log_.add(exc, d)
            continue
        if exc.rank == 1:
            (i,), (a,) = exc.occ, exc.virt
            num = f[a, i]
        else:
            (i, j), (a, b) = exc.occ, exc.virt
            num = w[a, b, i, j]
        out.set(exc, num / d, BACKGROUND)
    return out


def doubles_tensor(store: IntegralStore, fock: FockDiagonal, dgen_tol: float = DGEN_TOL):
    """Dense first-order ``t[i, j, a, b]`` over occupied/virtual spin orbitals."""
    orbs = store.orbitals()
    occ = orbs.occupied_spin_orbitals()
    vir = orbs.virtual_spin_orbitals()
    w = store.antisymmetrized[np.ix_(vir, vir, occ, occ)].transpose(2, 3, 0, 1)
    fo, fv = fock.values[occ], fock.values[vir]
    d = fo[:, None, None, None] + fo[None, :, None, None] - fv[None, None, :, None] - fv[None, None, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(np.abs(d) < dgen_tol, 0.0, w / d)
    return t, occ, vir


def second_order_triples(
    store: IntegralStore,
    fock: FockDiagonal,
    excitations=None,
    t2=None,
    dgen_tol: float = DGEN_TOL,
    log_: DegeneracyLog | None = None,
) -> AmplitudeStore:
    """Connected second-order triples from first-order doubles.

    ``t2`` overrides the first-order doubles tensor (shape ``(o, o, v, v)``,
    antisymmetric); pass zeros to switch the diagram off.
    """
    td, occ, vir = doubles_tensor(store, fock, dgen_tol)
    if t2 is not None:
        td = np.asarray(t2, dtype=float)
    w = store.antisymmetrized
    # <ei||bc> as [e, i, b, c] and <ma||jk> as [m, a, j, k]
    w_vovv = w[np.ix_(vir, occ, vir, vir)]
    w_ovoo = w[np.ix_(occ, vir, occ, occ)]
    x = np.einsum("jkae,eibc->ijkabc", td, w_vovv, optimize=True)
    x -= np.einsum("imbc,majk->ijkabc", td, w_ovoo, optimize=True)

    def p_i_jk(y):
        return y - y.transpose(1, 0, 2, 3, 4, 5) - y.transpose(2, 1, 0, 3, 4, 5)

    def p_a_bc(y):
        return y - y.transpose(0, 1, 2, 4, 3, 5) - y.transpose(0, 1, 2, 5, 4, 3)

    num = p_a_bc(p_i_jk(x))
    opos = {p: k for k, p in enumerate(occ)}
    vpos = {p: k for k, p in enumerate(vir)}
    out = AmplitudeStore()
    for exc in _excitations(store, (3,), excitations):
        d = fock.denominator(exc.occ, exc.virt)
        if abs(d) < dgen_tol:
            if log_ is not None:
                log_.add(exc, d)
            continue
        i, j, k = (opos[p] for p in exc.occ)
        a, b, c = (vpos[p] for p in exc.virt)
        val = num[i, j, k, a, b, c] / d
        if val != 0.0:
            out.set(exc, val, BACKGROUND)
    return out


@dataclass
class RSAmplitudes:
    """Determinant-space Rayleigh–Schrödinger cluster amplitudes by order."""

    first: AmplitudeStore
    second: AmplitudeStore
    e2: float
    skipped: DegeneracyLog


def rs_cluster_amplitudes(
    store: IntegralStore,
    fock: FockDiagonal,
    hamiltonian: HamiltonianMatrix | None = None,
    dgen_tol: float = DGEN_TOL,
    max_rank: int = 3,
) -> RSAmplitudes:
    """First- and second-order cluster amplitudes from the sector resolvent.

    ``psi1 = R0 V phi`` and ``psi2 = R0 (V - E1) psi1`` with
    ``H0 = sum_p f_pp n_p``; the connected second-order amplitudes follow
    from ``T2 phi = psi2 - 1/2 T1 psi1``.
    """
    basis = hamiltonian.basis if hamiltonian is not None else store.orbitals().sector()
    if hamiltonian is None:
        hamiltonian = build_matrix(store, basis)
    ref = fock.reference
    i0 = basis.index(ref)
    occ = basis.occupations().astype(float)
    n_so = occ.shape[1]
    h0 = occ @ fock.values[:n_so]
    den = h0[i0] - h0
    skipped = DegeneracyLog()
    r0 = np.zeros(len(basis))
    mask = np.abs(den) >= dgen_tol
    mask[i0] = False
    r0[mask] = 1.0 / den[mask]
    for i in np.nonzero(~mask)[0]:
        if i != i0:
            skipped.add(Excitation.between(ref, basis[int(i)]), float(den[i]))
    hm = hamiltonian.matrix

    def v_apply(x):
        return hm @ x - h0 * x

    phi = np.zeros(len(basis))
    phi[i0] = 1.0
    vphi = v_apply(phi)
    e1 = vphi[i0]
    psi1 = r0 * vphi
    e2 = float(vphi @ psi1)
    psi2 = r0 * (v_apply(psi1) - e1 * psi1)
    first = _amplitudes_from_vector(psi1, basis, ref, max_rank)
    t1 = t_matrix(first, basis)
    second = _amplitudes_from_vector(psi2 - 0.5 * (t1 @ psi1), basis, ref, max_rank)
    return RSAmplitudes(first, second, e2, skipped)


def _amplitudes_from_vector(vec, basis: DeterminantBasis, ref, max_rank) -> AmplitudeStore:
    out = AmplitudeStore()
    i0 = basis.index(ref)
    for i in np.nonzero(vec)[0]:
        if i == i0:
            continue
        exc = Excitation.between(ref, basis[int(i)])
        if exc.rank <= max_rank:
            out.set(exc, float(vec[i]) * reference_sign(exc, ref), BACKGROUND)
    return out


def mp2_energy(store: IntegralStore, amplitudes: AmplitudeStore) -> float:
    """Second-order energy ``sum f_ia t_i^a + sum <ij||ab> t_ij^ab`` from first-order amplitudes."""
    ref = store.orbitals().reference()
    f = fock_matrix(store, ref)
    w = store.antisymmetrized
    e = 0.0
    for exc, t in amplitudes.items():
        if exc.rank == 1:
            e += f[exc.occ[0], exc.virt[0]] * t
        elif exc.rank == 2:
            (i, j), (a, b) = exc.occ, exc.virt
            e += w[i, j, a, b] * t
    return float(e)


def text_order_n(
    store: IntegralStore,
    fock: FockDiagonal,
    space,
    n: int,
    hamiltonian: HamiltonianMatrix | None = None,
    dgen_tol: float = DGEN_TOL,
    log_: DegeneracyLog | None = None,
) -> AmplitudeStore:
    """External amplitudes of ``space`` accumulated through order ``n`` (1 or 2).

    Order 1 holds first-order singles and doubles; order 2 adds second-order
    singles, doubles and connected triples.
    """
    if n not in (1, 2):
        raise ValueError(f"perturbative order must be 1 or 2, got {n}")
    external = lambda e: not space.contains(e)  # noqa: E731
    total = first_order_sd(store, fock, dgen_tol=dgen_tol, log_=log_).filter(external)
    if n == 2:
        rs = rs_cluster_amplitudes(store, fock, hamiltonian, dgen_tol)
        if log_ is not None:
            log_.entries.extend(rs.skipped.entries)
        for exc, t in rs.second.filter(external).items():
            total.set(exc, total.get(exc, 0.0) + t, BACKGROUND)
    return total


def background_amplitudes(
    store: IntegralStore,
    fock: FockDiagonal,
    sd_keys,
    triples_keys,
    dgen_tol: float = DGEN_TOL,
    log_: DegeneracyLog | None = None,
) -> AmplitudeStore:
    """Frozen "sea" amplitudes: first-order S/D on ``sd_keys`` and second-order
    triples on ``triples_keys``."""
    sd = first_order_sd(store, fock, list(sd_keys), dgen_tol, log_)
    tr = second_order_triples(store, fock, list(triples_keys), dgen_tol=dgen_tol, log_=log_)
    out = AmplitudeStore()
    for s in (sd, tr):
        for k in s:
            out.set(k, s[k], BACKGROUND)
    return out


def all_triples(store: IntegralStore) -> list[Excitation]:
    return all_excitations(store.orbitals(), (3,))


__all__ = [
    "DegeneracyLog", "first_order_sd", "second_order_triples", "rs_cluster_amplitudes",
    "text_order_n", "background_amplitudes", "mp2_energy", "doubles_tensor", "all_triples",
]
