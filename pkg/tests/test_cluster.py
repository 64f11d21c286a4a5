import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qflow.active_space import ActiveSpace
from qflow.cluster import (
    BACKGROUND,
    ITERATIVE,
    AmplitudeStore,
    ClusterAnalysisError,
    Excitation,
    ExpActionError,
    GeneratorSet,
    all_excitations,
    cluster_analyze,
    exp_action,
    exp_nilpotent,
    reference_sign,
    sigma_matrix,
    t_matrix,
    trotter_state,
    union,
)
from qflow.fock import SpinOrbitalBasis, StateVector
from qflow.oracle import antisymmetric_expm, dense_expm, exact_diagonalize

ORBS = SpinOrbitalBasis(4, 2, 2)
BASIS = ORBS.sector()
EXC = all_excitations(ORBS, (1, 2, 3, 4))
REF = ORBS.reference()


def random_amplitudes(seed, scale=0.2, ranks=(1, 2)):
    rng = np.random.default_rng(seed)
    keys = [e for e in EXC if e.rank in ranks]
    return AmplitudeStore({e: scale * rng.normal() for e in keys})


def phi():
    return StateVector.single(BASIS, REF).coeffs


def test_excitation_validation():
    assert Excitation((2, 0), (6, 4)).occ == (0, 2)
    for occ, virt in [((0,), (4, 6)), ((0, 0), (4, 6)), ((0,), (5,)), ((), ())]:
        with pytest.raises(ValueError):
            Excitation(occ, virt)


def test_excitation_census_on_desk_model():
    counts = {r: sum(e.rank == r for e in EXC) for r in (1, 2, 3, 4)}
    assert counts == {1: 8, 2: 18, 3: 8, 4: 1}


def test_reference_sign_matches_state():
    for e in EXC:
        r, c, s = e.action(BASIS)
        i0 = BASIS.index(REF)
        hit = list(c).index(i0)
        assert s[hit] == reference_sign(e, REF)


def test_union_is_first_wins_and_tagged():
    a = AmplitudeStore({EXC[0]: 1.0, EXC[1]: 2.0})
    b = AmplitudeStore({EXC[1]: 9.0, EXC[2]: 3.0}, tag=BACKGROUND)
    u = union([a, b])
    assert dict(u) == {EXC[0]: 1.0, EXC[1]: 2.0, EXC[2]: 3.0}
    assert u.tag(EXC[1]) == ITERATIVE and u.tag(EXC[2]) == BACKGROUND
    assert len(union([a, a, a])) == 2


def test_store_dump_round_trip():
    s = random_amplitudes(0, ranks=(1, 2, 3))
    s.set(EXC[-1], -1e-300, BACKGROUND)
    back = AmplitudeStore.loads(s.dumps())
    assert dict(back) == dict(s)
    assert all(back.tag(k) == s.tag(k) for k in s)
    assert back.dumps() == s.dumps()
    with pytest.raises(ValueError):
        AmplitudeStore.loads("2 0 1 -> 4 0.5 iterative\n")


@given(st.integers(0, 10_000))
def test_sigma_is_antisymmetric_and_generator_set_agrees(seed):
    amps = random_amplitudes(seed, ranks=(1, 2, 3, 4))
    s = sigma_matrix(amps, BASIS)
    assert abs(s + s.T).max() == 0.0
    keys = list(amps)
    gens = GeneratorSet(keys, BASIS)
    theta = np.array([amps[k] for k in keys])
    assert abs(gens.matrix(theta) - s).max() == 0.0
    assert abs(gens.matrix(theta, antisymmetric=False) - t_matrix(amps, BASIS)).max() == 0.0


def test_excitation_operators_commute():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b = (EXC[int(i)] for i in rng.integers(len(EXC), size=2))
        ea, eb = t_matrix({a: 1.0}, BASIS), t_matrix({b: 1.0}, BASIS)
        assert abs(ea @ eb - eb @ ea).max() == 0.0


def test_t_is_strictly_raising():
    t = t_matrix(random_amplitudes(1, ranks=(1, 2, 3, 4)), BASIS).toarray()
    nilp = np.linalg.matrix_power(t, 5)
    assert np.all(nilp == 0.0)


@given(st.integers(0, 10_000), st.floats(0.01, 3.0))
def test_exp_action_matches_eigen_oracle(seed, scale):
    s = sigma_matrix(random_amplitudes(seed, scale=scale), BASIS)
    ref = antisymmetric_expm(s.toarray()) @ phi()
    out = exp_action(s, phi(), tol=1e-15)
    assert np.linalg.norm(out - ref) < 1e-11
    assert abs(np.linalg.norm(out) - 1.0) < 1e-11


def test_exp_action_two_level_rotation():
    e = Excitation((2, 3), (4, 5))
    for theta in (0.1, 0.7, 2.5):
        v = exp_action(sigma_matrix({e: theta}, BASIS), phi(), tol=1e-15)
        d = BASIS.index(REF)
        x = BASIS.index(next(b for b in BASIS if b.mask == 0b110011))
        assert v[d] == pytest.approx(np.cos(theta), abs=1e-13)
        assert abs(v[x]) == pytest.approx(abs(np.sin(theta)), abs=1e-13)


def test_exp_action_block_and_statevector():
    s = sigma_matrix(random_amplitudes(2), BASIS)
    block = np.eye(len(BASIS))[:, :3]
    out = exp_action(s, block, tol=1e-15)
    assert np.allclose(out, dense_expm(s) @ block, atol=1e-12)
    sv = exp_action(s, StateVector(BASIS, phi()))
    assert isinstance(sv, StateVector)
    with pytest.raises(ValueError):
        exp_action(s, np.ones(3))


def test_exp_action_term_cap():
    s = sigma_matrix(random_amplitudes(2), BASIS)
    with pytest.raises(ExpActionError):
        exp_action(s, phi(), tol=1e-30, max_terms=2)


def test_exp_nilpotent_matches_expm():
    t = t_matrix(random_amplitudes(4, scale=0.5, ranks=(1, 2, 3, 4)), BASIS)
    assert np.allclose(exp_nilpotent(t, phi()), dense_expm(t) @ phi(), atol=1e-13)
    with pytest.raises(ExpActionError):
        exp_nilpotent(np.eye(2), np.ones(2))


def test_trotter_exact_when_sigma_ext_vanishes():
    s = sigma_matrix(random_amplitudes(5), BASIS)
    zero = 0 * s
    exact = exp_action(s, phi(), tol=1e-15)
    for n in (1, 3, 7):
        assert np.linalg.norm(trotter_state(s, zero, n, phi(), tol=1e-15) - exact) < 1e-12


def test_trotter_exact_for_commuting_parts():
    # generators on disjoint spin orbitals and disjoint determinant pairs commute
    a = sigma_matrix({Excitation((0,), (4,)): 0.4}, BASIS)
    b = sigma_matrix({Excitation((3,), (7,)): -0.3}, BASIS)
    assert abs(a @ b - b @ a).max() < 1e-15
    exact = antisymmetric_expm((a + b).toarray()) @ phi()
    assert np.linalg.norm(trotter_state(a, b, 1, phi(), tol=1e-15) - exact) < 1e-12
    with pytest.raises(ValueError):
        trotter_state(a, b, 0, phi())


@given(st.integers(0, 10_000))
def test_cluster_analyze_inverts_exponential(seed):
    amps = random_amplitudes(seed, scale=0.3, ranks=(1, 2, 3, 4))
    v = exp_nilpotent(t_matrix(amps, BASIS), phi())
    back = cluster_analyze(StateVector(BASIS, 2.5 * v), REF)
    for e in EXC:
        assert back.get(e, 0.0) == pytest.approx(amps[e], abs=1e-12)


def test_cluster_analyze_of_reference_is_empty():
    assert len(cluster_analyze(StateVector(BASIS, phi()), REF)) == 0


def test_cluster_analyze_rank_cap_and_zero_overlap():
    amps = random_amplitudes(9, ranks=(1, 2))
    v = exp_nilpotent(t_matrix(amps, BASIS), phi())
    assert all(e.rank <= 2 for e in cluster_analyze(StateVector(BASIS, v), REF, max_rank=2))
    v[BASIS.index(REF)] = 0.0
    with pytest.raises(ClusterAnalysisError):
        cluster_analyze(StateVector(BASIS, v), REF)


def test_cluster_analyze_fci_reproduces_ground_state(small_model):
    _, h = small_model
    res = exact_diagonalize(h.dense(), 1)
    v = res.eigenvectors[:, 0]
    t = cluster_analyze(StateVector(h.basis, v), REF)
    y = exp_nilpotent(t_matrix(t, h.basis), phi())
    assert np.allclose(y, v / v[h.basis.index(REF)], atol=1e-12)


def test_internal_excitations_within_space():
    space = ActiveSpace((1,), (2,))
    internal = all_excitations(ORBS, (1, 2, 3, 4), within=space.mask)
    assert {e.rank for e in internal} == {1, 2}
    assert all(space.contains(e) for e in internal)
