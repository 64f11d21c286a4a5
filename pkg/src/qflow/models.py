"""Synthetic Hamiltonians for tests, verification runs and demos."""

from __future__ import annotations

import numpy as np

from qflow.integrals import IntegralStore, symmetrize_eri


def random_store(
    n_orb: int,
    n_elec: int,
    seed: int = 0,
    coupling: float = 0.1,
    gap: float = 1.0,
    ms2: int = 0,
) -> IntegralStore:
    """Random real Hamiltonian with an RHF-like orbital ladder.

    Occupied orbital energies sit below ``-gap/2`` and virtual ones above
    ``+gap/2``; ``coupling`` scales the off-diagonal one-body terms and the
    two-electron integrals, so small values give weak correlation.
    """
    rng = np.random.default_rng(seed)
    n_occ = (n_elec + ms2) // 2
    eps = np.concatenate([
        -gap / 2 - np.sort(rng.uniform(0.0, 1.0, n_occ))[::-1],
        gap / 2 + np.sort(rng.uniform(0.0, 1.0, n_orb - n_occ)),
    ])
    h = np.diag(eps) + coupling * _sym(rng.normal(size=(n_orb, n_orb)))
    np.fill_diagonal(h, eps)
    g = coupling * symmetrize_eri(rng.normal(size=(n_orb,) * 4))
    # keep a positive Coulomb-like diagonal so the model resembles a molecule
    for p in range(n_orb):
        for q in range(n_orb):
            g[p, p, q, q] = abs(g[p, p, q, q]) + coupling
    g = symmetrize_eri(g)
    # one-body shift so that orbital energies stay on the ladder after the mean field
    occ = range(n_occ)
    for p in range(n_orb):
        h[p, p] -= sum(2 * g[p, p, i, i] - g[p, i, i, p] for i in occ)
    return IntegralStore(n_orb, n_elec, ms2, h, g, float(rng.uniform(-1, 1)))


def _sym(a):
    return 0.5 * (a + a.T)


def canonicalize(store: IntegralStore, max_iter: int = 500, tol: float = 1e-12) -> IntegralStore:
    """Rotate to canonical RHF orbitals (closed shell) so that Brillouin holds.

    A plain Roothaan iteration in the orthonormal orbital basis with the
    aufbau occupation; raises if it does not converge.
    """
    if store.ms2:
        raise ValueError("canonicalize supports closed shells only")
    n, n_occ = store.n_orb, store.n_elec // 2
    c = np.eye(n)
    for _ in range(max_iter):
        d = c[:, :n_occ] @ c[:, :n_occ].T
        f = store.h + 2 * np.einsum("pqrs,rs->pq", store.g, d) - np.einsum("prsq,rs->pq", store.g, d)
        eps, c_new = np.linalg.eigh(f)
        c_new = c_new * np.sign(c_new[np.argmax(np.abs(c_new), axis=0), range(n)])
        d_new = c_new[:, :n_occ] @ c_new[:, :n_occ].T
        c = c_new
        if np.max(np.abs(d_new - d)) < tol:
            break
    else:
        raise RuntimeError("RHF iteration did not converge")
    h = c.T @ store.h @ c
    g = np.einsum("pqrs,pi,qj,rk,sl->ijkl", store.g, c, c, c, c, optimize=True)
    return IntegralStore(n, store.n_elec, 0, _sym(h), symmetrize_eri(g), store.e_core)


def two_level_fragment(gap: float = 1.0, k: float = 0.2, j: float = 0.6, e_core: float = 0.0) -> IntegralStore:
    """Two-electron, two-orbital fragment with inversion-like symmetry.

    Only the integrals allowed by a gerade/ungerade pair of orbitals are
    nonzero, so the exact ground state mixes the reference with the
    doubly excited determinant only.
    """
    h = np.diag([-gap / 2, gap / 2])
    g = np.zeros((2, 2, 2, 2))
    g[0, 0, 0, 0] = j
    g[1, 1, 1, 1] = j
    g[0, 0, 1, 1] = g[1, 1, 0, 0] = 0.8 * j
    for idx in [(0, 1, 0, 1), (1, 0, 1, 0), (0, 1, 1, 0), (1, 0, 0, 1)]:
        g[idx] = k
    return IntegralStore(2, 2, 0, h, g, e_core)


def combine_fragments(a: IntegralStore, b: IntegralStore) -> IntegralStore:
    """Direct sum of two closed-shell fragments without any coupling.

    Orbitals are ordered occupied(A), occupied(B), virtual(A), virtual(B) so
    the combined reference is again the lowest-orbital determinant.
    """
    na, nb = a.n_orb, b.n_orb
    n = na + nb
    h = np.zeros((n, n))
    g = np.zeros((n,) * 4)
    h[:na, :na] = a.h
    h[na:, na:] = b.h
    g[:na, :na, :na, :na] = a.g
    g[na:, na:, na:, na:] = b.g
    merged = IntegralStore(n, a.n_elec + b.n_elec, 0, h, g, a.e_core + b.e_core)
    oa, ob = a.n_elec // 2, b.n_elec // 2
    order = (
        list(range(oa)) + [na + i for i in range(ob)]
        + list(range(oa, na)) + [na + i for i in range(ob, nb)]
    )
    return merged.permuted(order)
