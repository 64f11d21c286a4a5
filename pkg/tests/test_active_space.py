import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qflow.active_space import (
    ActiveSpace,
    cas_basis,
    classify_excitation,
    embed_indices,
    enumerate_spaces,
    parse_space,
    projectors,
    split,
    template_picks,
)
from qflow.cluster import AmplitudeStore, Excitation, all_excitations
from qflow.fock import SectorError, SpinOrbitalBasis


def test_nine_orbital_template_gives_sixty_spaces():
    orbs = SpinOrbitalBasis(9, 4, 4)
    spaces = enumerate_spaces(orbs, *template_picks(4, 4))
    assert len(spaces) == 60
    assert [s.id for s in spaces] == list(range(60))
    assert len(set((s.occ, s.virt) for s in spaces)) == 60
    assert spaces[0] == ActiveSpace((0, 1), (4, 5), 0)


def test_cas_dimensions():
    orbs = SpinOrbitalBasis(9, 4, 4)
    assert len(cas_basis(ActiveSpace((0, 1), (4, 5)), orbs)) == 36
    assert len(cas_basis(ActiveSpace((2,), (7,)), orbs)) == 4


def test_cas_basis_reference_first_and_frozen_core():
    orbs = SpinOrbitalBasis(5, 3, 3)
    space = ActiveSpace((1, 2), (4,))
    b = cas_basis(space, orbs)
    assert b[0] == orbs.reference()
    assert len(b) == 9
    for d in b:
        assert d.alpha_mask & 1 and d.beta_mask & 1  # orbital 0 inactive, stays doubly occupied
        assert not (d.alpha_mask >> 3) & 1 and not (d.beta_mask >> 3) & 1


def test_template_picks_rejects_open_shell():
    assert template_picks(4, 4) == (2, 2)
    with pytest.raises(ValueError):
        template_picks(3, 4)
    with pytest.raises(ValueError):
        template_picks(6, 2)


def test_enumerate_rejects_oversized_picks():
    with pytest.raises(ValueError):
        enumerate_spaces(SpinOrbitalBasis(4, 2, 2), 3, 1)


def test_open_shell_rejected():
    with pytest.raises(SectorError):
        enumerate_spaces(SpinOrbitalBasis(4, 2, 1), 1, 1)


def test_parse_space_and_label_round_trip():
    s = parse_space("occ:[1, 0],virt:[5,4]", 7)
    assert s.occ == (0, 1) and s.virt == (4, 5) and s.id == 7
    assert parse_space(s.label()) == ActiveSpace((0, 1), (4, 5))
    for bad in ("occ:[0]", "virt:[1],occ:[0]", "occ:[a],virt:[1]"):
        with pytest.raises(ValueError):
            parse_space(bad)
    with pytest.raises(ValueError):
        ActiveSpace((0, 1), (1, 2))


def test_validate_index_ranges():
    orbs = SpinOrbitalBasis(4, 2, 2)
    with pytest.raises(ValueError):
        ActiveSpace((2,), (3,)).validate(orbs)
    with pytest.raises(ValueError):
        ActiveSpace((0,), (5,)).validate(orbs)


def test_mask_covers_both_spins():
    s = ActiveSpace((1,), (3,))
    assert s.spin_orbitals == frozenset({2, 3, 6, 7})
    assert s.mask == (1 << 2) | (1 << 3) | (1 << 6) | (1 << 7)


@given(st.integers(0, 3), st.integers(0, 3))
def test_projectors_sum_to_identity(i, j):
    orbs = SpinOrbitalBasis(4, 2, 2)
    basis = orbs.sector()
    spaces = enumerate_spaces(orbs, 1, 1)
    space = spaces[(i + j) % len(spaces)]
    p, qi, qe = projectors(space, basis)
    assert np.array_equal(p + qi + qe, np.ones(len(basis)))
    assert p.sum() == 1
    assert qi.sum() == len(cas_basis(space, orbs)) - 1
    idx = embed_indices(cas_basis(space, orbs), basis)
    assert np.all(p[idx] + qi[idx] == 1)


def test_split_partitions_excitations():
    orbs = SpinOrbitalBasis(4, 2, 2)
    store = AmplitudeStore({e: 0.1 * k for k, e in enumerate(all_excitations(orbs, (1, 2)), 1)})
    space = ActiveSpace((1,), (2,))
    internal, external = split(store, space)
    assert len(internal) + len(external) == len(store)
    assert set(internal) | set(external) == set(store)
    assert not set(internal) & set(external)
    assert all(classify_excitation(e, space) == "internal" for e in internal)
    assert all(classify_excitation(e, space) == "external" for e in external)
    # (1,1) space: 2 singles and one alpha-beta double
    assert len(internal) == 3


def test_internal_excitation_census_for_2_2_space():
    orbs = SpinOrbitalBasis(9, 4, 4)
    space = ActiveSpace((0, 1), (4, 5))
    counts = [len(all_excitations(orbs, (r,), within=space.mask)) for r in (1, 2, 3, 4)]
    assert counts == [8, 18, 8, 1]  # 35 = dim(CAS) - 1
    assert Excitation((0, 1, 2, 3), (8, 9, 10, 11)) in all_excitations(orbs, (4,), within=space.mask)
