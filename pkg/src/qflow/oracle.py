"""Brute-force reference computations.

Everything here is deliberately simple: dense matrices, LAPACK solvers and
explicit operator sums.  Solvers report their own residuals so callers can
assert on them instead of trusting convergence flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg

from qflow.fock import DeterminantBasis, OperatorString, apply_string

DENSE_CAP = 5000


class OracleError(RuntimeError):
    pass


@dataclass
class SpectrumResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # columns
    overlaps: np.ndarray  # |<ref|root>| per root
    residuals: np.ndarray

    @property
    def ground_energy(self) -> float:
        return float(self.eigenvalues[0])


def _dense(m) -> np.ndarray:
    if sp.issparse(m):
        if m.shape[0] > DENSE_CAP:
            raise OracleError(f"dimension {m.shape[0]} above dense oracle cap {DENSE_CAP}")
        return m.toarray()
    m = np.asarray(m, dtype=float)
    if m.shape[0] > DENSE_CAP:
        raise OracleError(f"dimension {m.shape[0]} above dense oracle cap {DENSE_CAP}")
    return m


def exact_diagonalize(m, n_roots: int = 1, reference_index: int | None = None) -> SpectrumResult:
    """Lowest ``n_roots`` eigenpairs of a symmetric matrix (dense LAPACK)."""
    m = _dense(m)
    if m.shape[0] and np.max(np.abs(m - m.T)) > 1e-8:
        raise OracleError("matrix is not symmetric within 1e-8")
    n_roots = min(n_roots, m.shape[0])
    w, v = scipy.linalg.eigh(m, subset_by_index=(0, n_roots - 1))
    res = np.linalg.norm(m @ v - v * w, axis=0)
    ov = np.abs(v[reference_index]) if reference_index is not None else np.full(n_roots, np.nan)
    return SpectrumResult(w, v, ov, res)


def nonsymmetric_eig(
    m, reference_index: int = 0, n_roots: int | None = None, residual_tol: float = 1e-8
) -> SpectrumResult:
    """Right eigenpairs of a general real matrix.

    Roots are sorted by real part, then the root of maximal ``|<ref|v>|`` is
    moved to the front and phased so that ``<ref|v> > 0``.  Vectors have unit
    norm.  Raises if the selected root is complex or its residual exceeds
    ``residual_tol * max(1, ||M||_inf)`` (defective matrix).
    """
    m = _dense(m)
    w, v = scipy.linalg.eig(m)
    order = np.argsort(w.real, kind="stable")
    w, v = w[order], v[:, order]
    v = v / np.linalg.norm(v, axis=0)
    ov = np.abs(v[reference_index])
    best = int(np.argmax(ov))
    order = [best] + [k for k in range(len(w)) if k != best]
    w, v, ov = w[order], v[:, order], ov[order]
    if n_roots is not None:
        w, v, ov = w[:n_roots], v[:, :n_roots], ov[:n_roots]
    if abs(w[0].imag) > 1e-8 * max(1.0, abs(w[0].real)):
        raise OracleError(f"selected root is complex: {w[0]}")
    if ov[0] > 0:
        v[:, 0] *= abs(v[reference_index, 0]) / v[reference_index, 0]
    res = np.linalg.norm(m @ v - v * w, axis=0)
    scale = max(1.0, np.linalg.norm(m, ord=np.inf))
    if res[0] > residual_tol * scale:
        raise OracleError(f"residual floor not met ({res[0]:.2e}); matrix may be defective")
    if np.all(np.abs(w.imag) <= 1e-12) and np.all(np.abs(v.imag) <= 1e-12):
        w, v = w.real, v.real
    return SpectrumResult(w, v, ov, res)


def ground_state(h, reference_index: int | None = None) -> tuple[float, np.ndarray]:
    """Ground pair of a symmetric (possibly sparse) matrix; Lanczos above the dense cap."""
    n = h.shape[0]
    if n <= DENSE_CAP:
        r = exact_diagonalize(h, 1)
        return r.ground_energy, r.eigenvectors[:, 0]
    v0 = None
    if reference_index is not None:
        v0 = np.full(n, 1e-3)
        v0[reference_index] = 1.0
    w, v = scipy.sparse.linalg.eigsh(h, k=1, which="SA", v0=v0, tol=1e-12)
    return float(w[0]), v[:, 0]


def rs_resolvent_order2(h0_diag, v, reference_index: int = 0, degeneracy_tol: float = 1e-8):
    """Textbook Rayleigh–Schrödinger quantities through second order.

    ``H = diag(h0_diag) + V`` with the reference an eigenvector of the
    diagonal part.  Returns ``(E2, psi1, psi2)`` in intermediate
    normalization where ``psi2 = R0 (V - E1) psi1`` and
    ``R0 = Q / (E0 - H0)``.
    """
    h0 = np.asarray(h0_diag, dtype=float)
    v = _dense(v)
    e0 = h0[reference_index]
    den = e0 - h0
    q = np.ones(len(h0), dtype=bool)
    q[reference_index] = False
    if np.any(np.abs(den[q]) < degeneracy_tol):
        raise OracleError("degenerate zeroth-order denominator")
    r0 = np.zeros(len(h0))
    r0[q] = 1.0 / den[q]
    phi = np.zeros(len(h0))
    phi[reference_index] = 1.0
    e1 = v[reference_index, reference_index]
    psi1 = r0 * (v @ phi)
    e2 = float(v[reference_index] @ psi1)
    psi2 = r0 * (v @ psi1 - e1 * psi1)
    return e2, psi1, psi2


def finite_diff_gradient(f, theta, h: float = 1e-5) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for k in range(len(theta)):
        e = np.zeros_like(theta)
        e[k] = h
        grad[k] = (f(theta + e) - f(theta - e)) / (2 * h)
    return grad


def operator_sum_matrix(strings, basis: DeterminantBasis) -> np.ndarray:
    """Dense matrix of ``sum coeff * string`` built one determinant at a time."""
    n = len(basis)
    m = np.zeros((n, n))
    for col, det in enumerate(basis):
        for s in strings:
            phase, out = apply_string(s, det)
            if phase:
                i = int(basis.index_of(out.mask))
                if i >= 0:
                    m[i, col] += s.coeff * phase
    return m


def hamiltonian_strings(store, tol: float = 0.0) -> list[OperatorString]:
    """``sum h_pq a†p a_q + 1/2 sum (pr|qs) a†p a†q a_s a_r`` over spin orbitals."""
    n_so = 2 * store.n_orb
    h = store.h_spin
    out = [OperatorString((), store.e_core)]
    for p, q in product(range(n_so), repeat=2):
        if abs(h[p, q]) > tol:
            out.append(OperatorString(((p, True), (q, False)), h[p, q]))
    for p, q, r, s in product(range(n_so), repeat=4):
        if p % 2 != r % 2 or q % 2 != s % 2:
            continue
        v = store.g[p // 2, r // 2, q // 2, s // 2]
        if abs(v) > tol:
            out.append(OperatorString(((p, True), (q, True), (s, False), (r, False)), 0.5 * v))
    return out


def operator_sum_hamiltonian(store, basis: DeterminantBasis) -> np.ndarray:
    return operator_sum_matrix(hamiltonian_strings(store), basis)


def dense_expm(m) -> np.ndarray:
    return scipy.linalg.expm(_dense(m))


def antisymmetric_expm(m) -> np.ndarray:
    """``exp(M)`` for real antisymmetric ``M`` via the Hermitian matrix ``iM``.

    Independent of Padé scaling-and-squaring; exactly orthogonal up to
    round-off.
    """
    m = _dense(m)
    if np.max(np.abs(m + m.T), initial=0.0) > 1e-12:
        raise OracleError("matrix is not antisymmetric")
    w, u = np.linalg.eigh(1j * m)
    return np.real((u * np.exp(-1j * w)) @ u.conj().T)
