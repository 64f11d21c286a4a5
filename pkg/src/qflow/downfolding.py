"""Effective Hamiltonians over complete active spaces.

Every builder returns the CAS block ``X^T A X`` of some transformed
Hamiltonian ``A`` where ``X`` embeds the CAS basis into the full sector.
The transformed operator is never formed: its action on the CAS columns
is computed directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import factorial

import numpy as np
import scipy.sparse as sp

from qflow.active_space import ActiveSpace, cas_basis, embed_indices
from qflow.cluster import AmplitudeStore, exp_action, exp_nilpotent, t_matrix
from qflow.fock import DeterminantBasis, interleave
from qflow.hamiltonian import HamiltonianMatrix, build_matrix, fock_diagonal
from qflow.integrals import IntegralStore, serialize_synthetic
from qflow.oracle import OracleError, nonsymmetric_eig
from qflow.perturbative import DGEN_TOL, DegeneracyLog, text_order_n

EXACT = "exact-unitary"
BCH = "bch"
PERTURBATIVE = "perturbative"
SES = "ses-nonhermitian"

HERMITIAN_TOL = 1e-10


class DownfoldingError(ValueError):
    pass


@dataclass
class EffectiveHamiltonian:
    """CAS-block operator; ``method`` is e.g. ``exact-unitary`` or ``bch-4``."""

    space: ActiveSpace
    basis: DeterminantBasis
    matrix: np.ndarray
    method: str
    hermitian: bool
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.basis)
        if self.matrix.shape != (n, n):
            raise DownfoldingError(f"matrix shape {self.matrix.shape} does not match CAS dimension {n}")
        if self.hermitian and n and np.max(np.abs(self.matrix - self.matrix.T)) > HERMITIAN_TOL:
            raise DownfoldingError("matrix flagged hermitian is not symmetric")

    @property
    def dimension(self) -> int:
        return len(self.basis)


def _cas_columns(h: HamiltonianMatrix, space: ActiveSpace):
    cas = cas_basis(space, h.basis.orbitals)
    idx = embed_indices(cas, h.basis)
    x = np.zeros((len(h.basis), len(cas)))
    x[idx, np.arange(len(cas))] = 1.0
    return cas, idx, x


def _check_square(h: HamiltonianMatrix, m):
    if m.shape != h.shape:
        raise DownfoldingError(f"operator shape {m.shape} does not match Hamiltonian {h.shape}")


def _check_antisymmetric(sigma):
    d = sigma + sigma.T
    size = abs(d).max() if sp.issparse(d) else np.max(np.abs(d), initial=0.0)
    if size > 1e-12:
        raise DownfoldingError(f"sigma_ext is not antisymmetric (max |s + s^T| = {size:.2e})")


def projection(h: HamiltonianMatrix, space: ActiveSpace) -> EffectiveHamiltonian:
    """Bare CAS block of ``H``."""
    cas, idx, _ = _cas_columns(h, space)
    m = h.matrix[idx][:, idx].toarray()
    return EffectiveHamiltonian(space, cas, 0.5 * (m + m.T), "projection", True)


def heff_unitary_exact(h: HamiltonianMatrix, sigma_ext, space: ActiveSpace, tol: float = 1e-14) -> EffectiveHamiltonian:
    """CAS block of ``exp(-s) H exp(s)`` for antisymmetric ``s``.

    With ``Y = exp(s) X`` the block is ``Y^T H Y``; the symmetric part is
    kept to remove round-off asymmetry.
    """
    _check_square(h, sigma_ext)
    _check_antisymmetric(sigma_ext)
    cas, _, x = _cas_columns(h, space)
    y = exp_action(sigma_ext, x, tol=tol)
    m = y.T @ (h.matrix @ y)
    return EffectiveHamiltonian(space, cas, 0.5 * (m + m.T), EXACT, True)


def heff_bch(h: HamiltonianMatrix, sigma_ext, space: ActiveSpace, k: int) -> EffectiveHamiltonian:
    """Commutator expansion of ``exp(-s) H exp(s)`` truncated at rank ``k``.

    The order-``j`` nested commutator ``(1/j!) [..[H, s].., s]`` equals
    ``sum_{a+b=j} (-s)^a H s^b / (a! b!)``, so its CAS block is
    ``sum (s^a X)^T H (s^b X) / (a! b!)`` using ``s^T = -s``.
    """
    if k < 1:
        raise DownfoldingError(f"commutator rank must be >= 1, got {k}")
    _check_square(h, sigma_ext)
    _check_antisymmetric(sigma_ext)
    cas, _, x = _cas_columns(h, space)
    powers = [x]
    for _ in range(k):
        powers.append(sigma_ext @ powers[-1])
    h_powers = [h.matrix @ p for p in powers]
    m = np.zeros((len(cas), len(cas)))
    for a in range(k + 1):
        for b in range(k + 1 - a):
            m += powers[a].T @ h_powers[b] / (factorial(a) * factorial(b))
    return EffectiveHamiltonian(space, cas, 0.5 * (m + m.T), f"{BCH}-{k}", True)


def heff_ses_nonhermitian(h: HamiltonianMatrix, t_ext: AmplitudeStore, space: ActiveSpace) -> EffectiveHamiltonian:
    """CAS block of ``exp(-T_ext) H exp(T_ext)`` by terminating power series."""
    internal = [e for e in t_ext if space.contains(e)]
    if internal:
        raise DownfoldingError(f"T_ext holds {len(internal)} internal amplitude(s), e.g. {internal[0].label()}")
    cas, idx, x = _cas_columns(h, space)
    t = t_matrix(t_ext, h.basis)
    z = h.matrix @ exp_nilpotent(t, x)
    m = exp_nilpotent(-t, z)[idx]
    return EffectiveHamiltonian(space, cas, m, SES, False)


def heff_perturbative(
    h: HamiltonianMatrix,
    store: IntegralStore,
    space: ActiveSpace,
    order: int,
    dgen_tol: float = DGEN_TOL,
) -> EffectiveHamiltonian:
    """Similarity-transformed block with external amplitudes through ``order``."""
    fock = fock_diagonal(store, h.basis.orbitals.reference())
    skipped = DegeneracyLog()
    t_ext = text_order_n(store, fock, space, order, h, dgen_tol, skipped)
    out = heff_ses_nonhermitian(h, t_ext, space)
    out.method = f"{PERTURBATIVE}-{order}"
    out.info = {
        "skipped": skipped.lines(),
        "min_denominator": _min_denominator(fock, t_ext),
    }
    return out


def _min_denominator(fock, store) -> float | None:
    dens = [abs(fock.denominator(e.occ, e.virt)) for e in store]
    return min(dens) if dens else None


@dataclass
class BlochResult:
    energy: float
    coefficients: np.ndarray  # CAS basis, intermediately normalized
    overlap: float
    residual: float
    heff: EffectiveHamiltonian


def bloch_hybrid_solve(
    h: HamiltonianMatrix,
    store: IntegralStore,
    space: ActiveSpace,
    order: int,
    tol: float = 1e-8,
    min_overlap: float = 0.1,
) -> BlochResult:
    """Eigenpair of ``H^eff[order]`` with maximal reference weight.

    The perturbative external amplitudes do not depend on the internal
    solution, so one diagonalization is the fixed point.
    """
    heff = heff_perturbative(h, store, space, order)
    try:
        res = nonsymmetric_eig(heff.matrix, reference_index=0, residual_tol=tol)
    except OracleError as exc:
        raise DownfoldingError(str(exc)) from None
    v = np.real(res.eigenvectors[:, 0])
    ov = float(res.overlaps[0])
    if ov <= min_overlap:
        raise DownfoldingError(f"no root with reference overlap above {min_overlap} (best {ov:.3f})")
    return BlochResult(float(np.real(res.eigenvalues[0])), v / v[0], ov, float(res.residuals[0]), heff)


# export ---------------------------------------------------------------


def _active_store(n_orb: int, n_elec: int, h, g, e_core) -> IntegralStore:
    return IntegralStore(n_orb, n_elec, 0, h, g, e_core)


def _unique_pairs(n):
    return [(p, q) for p in range(n) for q in range(p, n)]


def _unique_quads(n):
    pairs = _unique_pairs(n)
    return [(a, b) for a, b in combinations_with_replacement(range(len(pairs)), 2)], pairs


def _active_map(heff: EffectiveHamiltonian, sector: DeterminantBasis) -> np.ndarray:
    """Index in ``sector`` (active orbitals relabelled 0..n-1) of each CAS determinant."""
    spatial = heff.space.spatial

    def squeeze(mask):
        return sum(1 << k for k, p in enumerate(spatial) if (mask >> p) & 1)

    alpha = np.array([squeeze(int(m)) for m in heff.basis.alpha], dtype=np.int64)
    beta = np.array([squeeze(int(m)) for m in heff.basis.beta], dtype=np.int64)
    idx = sector.index_of(interleave(alpha, beta))
    if np.any(idx < 0):
        raise DownfoldingError("CAS determinant outside the active-orbital sector")
    return idx


def fit_integrals(heff: EffectiveHamiltonian) -> tuple[IntegralStore, float]:
    """Least-squares ``(e_core, h, g)`` over the active orbitals reproducing the block.

    Only the symmetric part is fitted.  Returns the store and the max-norm
    residual of the refitted matrix; a block that is a genuine two-body
    operator (for example a bare projection) is reproduced to round-off.
    """
    n = heff.space.n_orbitals
    ne = heff.space.n_electrons
    zero_h, zero_g = np.zeros((n, n)), np.zeros((n,) * 4)
    sector = _active_store(n, ne, zero_h, zero_g, 0.0).orbitals().sector()
    perm = _active_map(heff, sector)
    target = 0.5 * (heff.matrix + heff.matrix.T)
    dim = len(sector)
    inv = np.empty(dim, dtype=int)
    inv[perm] = np.arange(dim)
    iu = np.triu_indices(dim)

    def column(store):
        m = build_matrix(store, sector).matrix.toarray()[np.ix_(inv, inv)]
        return m[iu]

    cols, setters = [column(_active_store(n, ne, zero_h, zero_g, 1.0))], []
    for p, q in _unique_pairs(n):
        hh = np.zeros((n, n))
        hh[p, q] = hh[q, p] = 1.0
        cols.append(column(_active_store(n, ne, hh, zero_g, 0.0)))
        setters.append(("h", (p, q)))
    quads, pairs = _unique_quads(n)
    for a, b in quads:
        (p, q), (r, s) = pairs[a], pairs[b]
        gg = _eri_unit(n, p, q, r, s)
        cols.append(column(_active_store(n, ne, zero_h, gg, 0.0)))
        setters.append(("g", (p, q, r, s)))
    a_mat = np.stack(cols, axis=1)
    coef, *_ = np.linalg.lstsq(a_mat, target[iu], rcond=None)
    h_fit, g_fit = np.zeros((n, n)), np.zeros((n,) * 4)
    for c, (kind, ind) in zip(coef[1:], setters):
        if kind == "h":
            h_fit[ind] = h_fit[ind[::-1]] = c
        else:
            g_fit += c * _eri_unit(n, *ind)
    fitted = _active_store(n, ne, h_fit, g_fit, coef[0])
    m = build_matrix(fitted, sector).matrix.toarray()[np.ix_(inv, inv)]
    return fitted, float(np.max(np.abs(m - target), initial=0.0))


def _eri_unit(n, p, q, r, s):
    g = np.zeros((n,) * 4)
    for i, j, k, l in [(p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
                       (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p)]:
        g[i, j, k, l] = 1.0
    return g


def export_json(heff: EffectiveHamiltonian) -> str:
    """Synthetic-format JSON of the fitted active-orbital Hamiltonian."""
    store, resid = fit_integrals(heff)
    return serialize_synthetic(
        store,
        method=heff.method,
        space=heff.space.label(),
        hermitian=heff.hermitian,
        asymmetry=float(np.max(np.abs(heff.matrix - heff.matrix.T), initial=0.0)),
        fit_residual=resid,
    )
