"""Hamiltonian matrices over determinant bases (Slater–Condon rules)."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.sparse as sp

from qflow.fock import Determinant, DeterminantBasis, SectorError, apply_string_masks, popcount
from qflow.integrals import IntegralStore

DENSE_LIMIT = 20000


@dataclass
class HamiltonianMatrix:
    """Sector Hamiltonian in CSR form; ``dense()`` materializes it."""

    basis: DeterminantBasis
    matrix: sp.csr_matrix
    store: IntegralStore

    def __matmul__(self, other):
        return self.matrix @ other

    @property
    def shape(self):
        return self.matrix.shape

    def dense(self) -> np.ndarray:
        if len(self.basis) > DENSE_LIMIT:
            raise MemoryError(f"refusing to densify a {len(self.basis)}-dimensional Hamiltonian")
        return self.matrix.toarray()

    def element(self, i: int, j: int) -> float:
        return float(self.matrix[i, j])


def _check_basis(store: IntegralStore, basis: DeterminantBasis):
    if basis.orbitals.n_spatial > store.n_orb:
        raise SectorError(
            f"basis uses {basis.orbitals.n_spatial} orbitals, store has {store.n_orb}"
        )
    if len(basis):
        na = popcount(basis.alpha)
        nb = popcount(basis.beta)
        if np.any(na != na[0]) or np.any(nb != nb[0]):
            raise SectorError("basis mixes particle-number sectors")


def diagonal_elements(store: IntegralStore, basis: DeterminantBasis) -> np.ndarray:
    n_so = 2 * basis.orbitals.n_spatial
    occ = basis.occupations().astype(float)
    hd = np.diag(store.h_spin)[:n_so]
    w = store.antisymmetrized[:n_so, :n_so, :n_so, :n_so]
    jk = np.einsum("pqpq->pq", w)
    return store.e_core + occ @ hd + 0.5 * np.einsum("ip,pq,iq->i", occ, jk, occ)


def build_matrix(store: IntegralStore, basis: DeterminantBasis) -> HamiltonianMatrix:
    """Slater–Condon Hamiltonian over ``basis`` (includes ``e_core``).

    Connected pairs are generated per excitation pattern and vectorized over
    the basis: singles ``i -> a`` carry ``h_ai + sum_k <ak||ik>`` over the
    occupied ``k`` of the ket, doubles ``ij -> ab`` carry ``<ab||ij>``.
    Images outside ``basis`` are dropped, so the result is the projection of
    ``H`` onto the span of ``basis``.
    """
    _check_basis(store, basis)
    n_so = 2 * basis.orbitals.n_spatial
    h = store.h_spin[:n_so, :n_so]
    w = store.antisymmetrized[:n_so, :n_so, :n_so, :n_so]
    masks = basis.masks
    occ = basis.occupations().astype(float)
    rows = [np.arange(len(basis))]
    cols = [np.arange(len(basis))]
    vals = [diagonal_elements(store, basis)]

    def emit(ops, values):
        ph, new = apply_string_masks(ops, masks)
        hit = ph != 0
        if not np.any(hit):
            return
        tgt = basis.index_of(new[hit])
        keep = tgt >= 0
        src = np.nonzero(hit)[0][keep]
        rows.append(tgt[keep])
        cols.append(src)
        v = values if np.isscalar(values) else values[hit][keep]
        vals.append(ph[hit][keep] * v)

    for i in range(n_so):
        for a in range(n_so):
            if a == i or (a - i) % 2:
                continue
            per_det = h[a, i] + occ @ w[a, :, i, :].diagonal()
            if np.any(per_det != 0.0):
                emit(((a, True), (i, False)), per_det)
    pairs = list(combinations(range(n_so), 2))
    for i, j in pairs:
        for a, b in pairs:
            if {a, b} & {i, j}:
                continue
            v = w[a, b, i, j]
            if v != 0.0:
                emit(((a, True), (b, True), (j, False), (i, False)), v)

    n = len(basis)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    mat.sum_duplicates()
    return HamiltonianMatrix(basis, mat, store)


@dataclass(frozen=True)
class FockDiagonal:
    """Dressed one-particle energies ``f_pp`` per spin orbital (Hartree)."""

    values: np.ndarray
    reference: Determinant

    def __getitem__(self, p):
        return self.values[p]

    def denominator(self, occ, virt) -> float:
        return float(sum(self.values[i] for i in occ) - sum(self.values[a] for a in virt))


def fock_matrix(store: IntegralStore, reference: Determinant) -> np.ndarray:
    """Spin-orbital Fock matrix ``f_pq = h_pq + sum_i <pi||qi>`` over occupied ``i``."""
    occ = reference.occupied()
    n_so = 2 * store.n_orb
    if occ and occ[-1] >= n_so:
        raise SectorError("reference occupies orbitals beyond the store")
    w = store.antisymmetrized
    f = store.h_spin.copy()
    for i in occ:
        f += w[:, i, :, i]
    return f


def fock_diagonal(store: IntegralStore, reference: Determinant) -> FockDiagonal:
    return FockDiagonal(np.diag(fock_matrix(store, reference)).copy(), reference)


def reference_energy(store: IntegralStore, reference: Determinant | None = None) -> float:
    ref = reference or store.orbitals().reference()
    occ = ref.occupied()
    w = store.antisymmetrized
    e = store.e_core + sum(store.h_spin[i, i] for i in occ)
    e += 0.5 * sum(w[i, j, i, j] for i in occ for j in occ)
    return float(e)
