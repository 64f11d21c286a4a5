import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qflow.fock import Determinant, SpinOrbitalBasis, enumerate_sector, excitation_between
from qflow.hamiltonian import build_matrix, diagonal_elements, fock_diagonal, fock_matrix, reference_energy
from qflow.integrals import IntegralStore
from qflow.models import random_store
from qflow.oracle import antisymmetric_expm, operator_sum_hamiltonian


def one_body_store(n, n_elec, diag, e_core=0.0):
    return IntegralStore(n, n_elec, 0, np.diag(diag), np.zeros((n,) * 4), e_core)


def test_reference_diagonal_one_body():
    s = one_body_store(3, 2, [-1.0, 0.5, 2.0], e_core=0.25)
    basis = s.orbitals().sector()
    h = build_matrix(s, basis)
    i = basis.index(s.orbitals().reference())
    assert h.element(i, i) == pytest.approx(0.25 + 2 * -1.0)


@given(st.integers(0, 10_000), st.sampled_from([(2, 2, 0), (3, 2, 0), (4, 4, 0), (3, 3, 1), (4, 2, 2)]))
def test_slater_condon_equals_operator_sum(seed, shape):
    n, ne, ms2 = shape
    s = random_store(n, ne, seed=seed, ms2=ms2)
    basis = s.orbitals().sector()
    sc = build_matrix(s, basis).dense()
    oracle = operator_sum_hamiltonian(s, basis)
    assert np.max(np.abs(sc - oracle)) < 1e-12
    assert np.max(np.abs(sc - sc.T)) < 1e-12


def test_rank_three_pairs_vanish(medium_model):
    _, h = medium_model
    m = h.dense()
    basis = h.basis
    rng = np.random.default_rng(0)
    checked = 0
    for i, j in rng.integers(0, len(basis), size=(400, 2)):
        if excitation_between(basis[int(i)], basis[int(j)], max_rank=2) is None:
            assert m[i, j] == 0.0
            checked += 1
    assert checked > 10


def test_diagonal_helper_matches_matrix(small_model):
    s, h = small_model
    assert np.allclose(diagonal_elements(s, h.basis), h.matrix.diagonal(), atol=1e-13)


def test_fock_zero_two_body():
    s = one_body_store(3, 2, [-1.0, 0.5, 2.0])
    f = fock_diagonal(s, s.orbitals().reference())
    assert np.allclose(f.values, np.repeat([-1.0, 0.5, 2.0], 2))


def test_fock_empty_reference():
    s = random_store(3, 2, seed=1)
    f = fock_diagonal(s, Determinant(0, 0))
    assert np.allclose(f.values, np.diag(s.h_spin))


def test_fock_matches_operator_contraction():
    """f_pq = <Phi| a_p [H, a_q^+] |Phi> - <Phi|H|Phi> delta for virtual p, q:
    with one extra electron added in q, <Phi_q|H|Phi_p> - E_ref delta_pq."""
    s = random_store(3, 2, seed=4)
    ref = s.orbitals().reference()
    f = fock_matrix(s, ref)
    n1 = SpinOrbitalBasis(3, 2, 1)
    basis = enumerate_sector(n1, 2, 1)
    h = operator_sum_hamiltonian(s, basis)
    e_ref = reference_energy(s, ref)
    for p in (2, 4):  # alpha virtuals
        for q in (2, 4):
            dp = Determinant.from_spin_orbitals(sorted(ref.occupied() + [p]))
            dq = Determinant.from_spin_orbitals(sorted(ref.occupied() + [q]))
            # both extra electrons sit above the two reference electrons, so no sign
            val = h[basis.index(dp), basis.index(dq)] - (e_ref if p == q else 0.0)
            assert val == pytest.approx(f[p, q], abs=1e-12)


def test_reference_energy_matches_matrix(small_model):
    s, h = small_model
    i = h.basis.index(s.orbitals().reference())
    assert reference_energy(s) == pytest.approx(h.element(i, i), abs=1e-12)


def test_spectrum_invariant_under_orthogonal_conjugation(small_model, rng):
    _, h = small_model
    m = h.dense()
    a = rng.normal(size=m.shape) * 0.1
    u = antisymmetric_expm(a - a.T)
    w0 = np.linalg.eigvalsh(m)
    w1 = np.linalg.eigvalsh(u.T @ m @ u)
    assert np.max(np.abs(w0 - w1)) < 1e-10


def test_projection_onto_partial_basis(small_model):
    s, h = small_model
    idx = [0, 3, 7, 11]
    from qflow.fock import DeterminantBasis

    sub = DeterminantBasis(h.basis.alpha[idx], h.basis.beta[idx], h.basis.orbitals)
    part = build_matrix(s, sub).dense()
    assert np.allclose(part, h.dense()[np.ix_(idx, idx)], atol=1e-13)
