"""Cluster amplitudes, excitation-operator matrices and exponentials."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Iterator, Mapping, MutableMapping
from dataclasses import dataclass
from itertools import combinations
from math import ceil

import numpy as np
import scipy.sparse as sp

from qflow.fock import (
    Determinant,
    DeterminantBasis,
    SpinOrbitalBasis,
    StateVector,
    apply_string_masks,
    bits,
    excitation_string,
)

ITERATIVE = "iterative"
BACKGROUND = "perturbative-background"


@dataclass(frozen=True, order=True)
class Excitation:
    """Spin-conserving excitation ``occ -> virt`` over spin orbitals.

    The operator is ``a†_{v1} ... a†_{vk} a_{ok} ... a_{o1}`` with both
    tuples ascending.
    """

    occ: tuple[int, ...]
    virt: tuple[int, ...]

    def __post_init__(self):
        occ, virt = tuple(sorted(self.occ)), tuple(sorted(self.virt))
        if len(occ) != len(virt) or not occ:
            raise ValueError(f"bad excitation {occ} -> {virt}")
        if len(set(occ)) != len(occ) or len(set(virt)) != len(virt) or set(occ) & set(virt):
            raise ValueError(f"repeated orbitals in {occ} -> {virt}")
        if sum(p % 2 for p in occ) != sum(p % 2 for p in virt):
            raise ValueError(f"{occ} -> {virt} does not conserve spin")
        object.__setattr__(self, "occ", occ)
        object.__setattr__(self, "virt", virt)

    @property
    def rank(self) -> int:
        return len(self.occ)

    @property
    def ops(self):
        return excitation_string(self.occ, self.virt).ops

    @classmethod
    def between(cls, ref: Determinant, det: Determinant) -> Excitation:
        m1, m2 = ref.mask, det.mask
        return cls(tuple(bits(m1 & ~m2)), tuple(bits(m2 & ~m1)))

    def label(self) -> str:
        return f"{self.rank} {' '.join(map(str, self.occ))} -> {' '.join(map(str, self.virt))}"

    def action(self, basis: DeterminantBasis):
        """``(rows, cols, signs)`` with ``E |cols> = sign |rows>`` inside ``basis``."""
        ph, new = apply_string_masks(self.ops, basis.masks)
        hit = np.nonzero(ph)[0]
        tgt = basis.index_of(new[hit])
        keep = tgt >= 0
        return tgt[keep], hit[keep], ph[hit][keep].astype(float)


def all_excitations(orbitals: SpinOrbitalBasis, ranks: Iterable[int], within: int | None = None) -> list[Excitation]:
    """Spin-conserving excitations out of the reference, sorted canonically.

    ``within`` restricts all indices to a spin-orbital mask.
    """
    occ = orbitals.occupied_spin_orbitals()
    virt = orbitals.virtual_spin_orbitals()
    if within is not None:
        occ = [p for p in occ if (within >> p) & 1]
        virt = [p for p in virt if (within >> p) & 1]
    out = []
    for r in ranks:
        for o in combinations(occ, r):
            so = sum(p % 2 for p in o)
            for v in combinations(virt, r):
                if sum(p % 2 for p in v) == so:
                    out.append(Excitation(o, v))
    return sorted(out, key=_canonical_key)


def _canonical_key(e: Excitation):
    return (e.rank, e.occ, e.virt)


class AmplitudeStore(MutableMapping):
    """Excitation -> amplitude map with a provenance tag per entry."""

    def __init__(self, items: Mapping[Excitation, float] | Iterable | None = None, tag: str = ITERATIVE):
        self._amp: dict[Excitation, float] = {}
        self._tag: dict[Excitation, str] = {}
        if items is not None:
            pairs = items.items() if isinstance(items, Mapping) else items
            for k, v in pairs:
                self.set(k, v, tag)

    def set(self, exc: Excitation, value: float, tag: str = ITERATIVE):
        self._amp[exc] = float(value)
        self._tag[exc] = tag

    def __getitem__(self, exc):
        return self._amp[exc]

    def __setitem__(self, exc, value):
        self.set(exc, value, self._tag.get(exc, ITERATIVE))

    def __delitem__(self, exc):
        del self._amp[exc]
        del self._tag[exc]

    def __iter__(self) -> Iterator[Excitation]:
        return iter(self._amp)

    def __len__(self):
        return len(self._amp)

    def tag(self, exc) -> str:
        return self._tag[exc]

    def copy(self) -> AmplitudeStore:
        out = AmplitudeStore()
        out._amp = dict(self._amp)
        out._tag = dict(self._tag)
        return out

    def filter(self, pred: Callable[[Excitation], bool]) -> AmplitudeStore:
        out = AmplitudeStore()
        for k in self:
            if pred(k):
                out.set(k, self._amp[k], self._tag[k])
        return out

    def sorted_keys(self) -> list[Excitation]:
        return sorted(self._amp, key=_canonical_key)

    def __repr__(self):
        return f"AmplitudeStore({len(self)} amplitudes)"

    def dumps(self) -> str:
        """Text dump, one ``rank occ... -> virt... value tag`` line per entry."""
        lines = []
        for k in self.sorted_keys():
            lines.append(f"{k.label()} {self._amp[k]:.17g} {self._tag[k]}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def loads(cls, text: str) -> AmplitudeStore:
        out = cls()
        for n, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            left, right = line.split("->")
            lf, rf = left.split(), right.split()
            rank = int(lf[0])
            occ = tuple(int(x) for x in lf[1:])
            virt = tuple(int(x) for x in rf[:rank])
            if len(occ) != rank or len(rf) != rank + 2:
                raise ValueError(f"line {n}: malformed amplitude record {line!r}")
            out.set(Excitation(occ, virt), float(rf[rank]), rf[rank + 1])
        return out


def union(stores: Iterable[AmplitudeStore]) -> AmplitudeStore:
    """Non-repetitive merge: the earliest store wins on duplicate keys."""
    out = AmplitudeStore()
    for s in stores:
        for k in s:
            if k not in out:
                out.set(k, s[k], s.tag(k))
    return out


def t_matrix(store: Mapping[Excitation, float], basis: DeterminantBasis) -> sp.csr_matrix:
    """Sparse matrix of ``T = sum_k t_k E_k`` over ``basis``."""
    n = len(basis)
    rows, cols, vals = [], [], []
    for exc, t in store.items():
        if t == 0.0:
            continue
        r, c, s = exc.action(basis)
        rows.append(r)
        cols.append(c)
        vals.append(s * t)
    if not rows:
        return sp.csr_matrix((n, n))
    m = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    m.sum_duplicates()
    return m


def sigma_matrix(store: Mapping[Excitation, float], basis: DeterminantBasis) -> sp.csr_matrix:
    """Anti-Hermitian ``sigma = sum_k theta_k (E_k - E_k^dagger)``; exactly antisymmetric."""
    t = t_matrix(store, basis)
    return (t - t.T).tocsr()


class GeneratorSet:
    """Fixed list of excitations with a precomputed sparse pattern on a basis.

    ``matrix(theta)`` assembles ``sum_k theta_k E_k`` (or the anti-Hermitian
    combination) without re-applying operator strings.
    """

    def __init__(self, excitations: list[Excitation], basis: DeterminantBasis):
        self.excitations = list(excitations)
        self.basis = basis
        rows, cols, signs, owner = [], [], [], []
        for k, exc in enumerate(self.excitations):
            r, c, s = exc.action(basis)
            rows.append(r)
            cols.append(c)
            signs.append(s)
            owner.append(np.full(len(r), k))
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
        self.rows = cat(rows, np.int64)
        self.cols = cat(cols, np.int64)
        self.signs = cat(signs, float)
        self.owner = cat(owner, np.int64)

    def __len__(self):
        return len(self.excitations)

    def _pattern(self, antisymmetric: bool):
        """CSR skeleton plus the source entry of every stored value.

        Distinct excitations never connect the same determinant pair, so
        the COO entries are unique and the skeleton can be reused.
        """
        key = bool(antisymmetric)
        cache = self.__dict__.setdefault("_patterns", {})
        if key not in cache:
            m = len(self.rows)
            if antisymmetric:
                r = np.concatenate([self.rows, self.cols])
                c = np.concatenate([self.cols, self.rows])
            else:
                r, c = self.rows, self.cols
            n = len(self.basis)
            skel = sp.csr_matrix((np.arange(1, len(r) + 1, dtype=float), (r, c)), shape=(n, n))
            src = skel.data.astype(np.int64) - 1
            if skel.nnz != len(r) or len(np.unique(src)) != len(r):
                raise ValueError("generator patterns overlap")
            sign = np.concatenate([self.signs, -self.signs]) if antisymmetric else self.signs
            owner = np.concatenate([self.owner, self.owner]) if antisymmetric else self.owner
            cache[key] = (skel.indptr, skel.indices, sign[src], owner[src], m)
        return cache[key]

    def matrix(self, theta, antisymmetric: bool = True) -> sp.csr_matrix:
        theta = np.asarray(theta, dtype=float)
        n = len(self.basis)
        indptr, indices, sign, owner, _ = self._pattern(antisymmetric)
        return sp.csr_matrix((sign * theta[owner], indices, indptr), shape=(n, n))

    def single(self, k: int, antisymmetric: bool = True) -> sp.csr_matrix:
        theta = np.zeros(len(self))
        theta[k] = 1.0
        return self.matrix(theta, antisymmetric)


class ExpActionError(RuntimeError):
    pass


def _norm1(m) -> float:
    if sp.issparse(m):
        return float(abs(m).sum(axis=0).max()) if m.nnz else 0.0
    return float(np.abs(m).sum(axis=0).max()) if m.size else 0.0


def exp_action(m, v, tol: float = 1e-12, max_terms: int = 200):
    """``exp(M) v`` by scaled Taylor stepping.

    ``M`` is split into ``s`` steps with ``||M/s||_1 <= 1``; each step sums
    Taylor terms until the next term is below ``tol`` relative to the
    partial sum.  ``v`` may be a vector, a block of column vectors or a
    :class:`StateVector`.
    """
    if isinstance(v, StateVector):
        return StateVector(v.basis, exp_action(m, v.coeffs, tol, max_terms))
    v = np.array(v, dtype=float, copy=True)
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: {m.shape} vs {v.shape}")
    norm = _norm1(m)
    if norm == 0.0:
        return v
    steps = max(1, ceil(norm))
    a = m / steps if not sp.issparse(m) else (m / steps).tocsr()
    for _ in range(steps):
        acc = v.copy()
        term = v
        for k in range(1, max_terms + 1):
            term = (a @ term) / k
            acc += term
            if np.linalg.norm(term) <= tol * np.linalg.norm(acc):
                break
        else:
            raise ExpActionError(f"Taylor series not converged in {max_terms} terms")
        v = acc
    return v


def exp_nilpotent(t, v, max_terms: int = 64):
    """``exp(T) v`` for nilpotent ``T`` by the terminating power series."""
    v = np.array(v, dtype=float, copy=True)
    acc = v.copy()
    term = v
    for k in range(1, max_terms + 1):
        term = (t @ term) / k
        if not np.any(term):
            return acc
        acc += term
    raise ExpActionError("operator is not nilpotent within the term cap")


def trotter_state(sigma_int, sigma_ext, n: int, reference, tol: float = 1e-12):
    """``(exp(sigma_ext/N) exp(sigma_int/N))^N |ref>``."""
    if n < 1:
        raise ValueError("Trotter rank must be >= 1")
    v = reference
    for _ in range(n):
        v = exp_action(sigma_int / n, v, tol)
        v = exp_action(sigma_ext / n, v, tol)
    return v


class ClusterAnalysisError(ValueError):
    pass


def cluster_analyze(state: StateVector, reference: Determinant, max_rank: int | None = None) -> AmplitudeStore:
    """Cluster amplitudes ``T`` with ``exp(T)|ref> = state / <ref|state>``.

    Uses ``T = log(1 + C')`` with ``C'`` the intermediately normalized CI
    excitation operator; the series terminates because excitation operators
    commute and are nilpotent.  The basis must be closed under products of
    its excitations (a full sector or a CAS basis).
    """
    basis = state.basis
    i0 = basis.index(reference)
    c0 = state.coeffs[i0]
    if abs(c0) < 1e-12:
        raise ClusterAnalysisError("reference overlap vanishes; intermediate normalization impossible")
    c = state.coeffs / c0
    cprime = AmplitudeStore()
    for i, det in enumerate(basis):
        if i == i0 or c[i] == 0.0:
            continue
        exc = Excitation.between(reference, det)
        cprime[exc] = c[i] * reference_sign(exc, reference)
    cmat = t_matrix(cprime, basis)
    phi = np.zeros(len(basis))
    phi[i0] = 1.0
    tphi = np.zeros(len(basis))
    term = phi
    for k in range(1, reference.n_alpha + reference.n_beta + 2):
        term = cmat @ term
        if not np.any(term):
            break
        tphi += ((-1) ** (k + 1) / k) * term
    out = AmplitudeStore()
    for i in np.nonzero(tphi)[0]:
        if i == i0:
            continue
        exc = Excitation.between(reference, basis[int(i)])
        if max_rank is None or exc.rank <= max_rank:
            out[exc] = tphi[i] * reference_sign(exc, reference)
    return out


def reference_sign(exc: Excitation, reference: Determinant) -> float:
    """Phase ``s`` in ``E|ref> = s|D>``."""
    ph, _ = apply_string_masks(exc.ops, np.array([reference.mask]))
    return float(ph[0])
