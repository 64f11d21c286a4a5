"""Determinants, fermionic operator strings and state vectors.

Spin orbitals are interleaved: spatial orbital ``p`` carries spin orbitals
``2p`` (alpha) and ``2p + 1`` (beta).  A determinant is stored as two spatial
occupation bitmasks; its spin-orbital bitmask interleaves them.  Creation
strings are ordered by ascending spin-orbital index, so the fermionic phase of
``a_p`` / ``a†_p`` is the parity of the occupied spin orbitals below ``p``.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass
from itertools import combinations
from math import comb

import numpy as np


class SectorError(ValueError):
    """Raised for an invalid or mismatched particle-number sector."""


def interleave(alpha, beta):
    """Spin-orbital mask(s) from spatial alpha/beta masks (works on arrays)."""
    alpha = np.asarray(alpha, dtype=np.int64)
    beta = np.asarray(beta, dtype=np.int64)
    out = np.zeros(np.broadcast(alpha, beta).shape, dtype=np.int64)
    p = 0
    while np.any((alpha >> p) | (beta >> p)):
        out |= ((alpha >> p) & 1) << (2 * p)
        out |= ((beta >> p) & 1) << (2 * p + 1)
        p += 1
    return out


def deinterleave(masks):
    """Inverse of :func:`interleave`; returns ``(alpha, beta)``."""
    masks = np.asarray(masks, dtype=np.int64)
    alpha = np.zeros_like(masks)
    beta = np.zeros_like(masks)
    p = 0
    while np.any(masks >> (2 * p)):
        alpha |= ((masks >> (2 * p)) & 1) << p
        beta |= ((masks >> (2 * p + 1)) & 1) << p
        p += 1
    return alpha, beta


def popcount(x):
    return np.bitwise_count(np.asarray(x, dtype=np.int64))


def bits(mask: int) -> list[int]:
    """Indices of set bits, ascending."""
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class SpinOrbitalBasis:
    """Spatial orbitals plus the closed/open-shell reference occupation.

    The reference fills the lowest ``n_alpha`` alpha and ``n_beta`` beta
    orbitals.
    """

    n_spatial: int
    n_alpha: int
    n_beta: int

    def __post_init__(self):
        if self.n_spatial < 0 or self.n_spatial > 30:
            raise SectorError(f"n_spatial={self.n_spatial} outside supported range [0, 30]")
        if not (0 <= self.n_alpha <= self.n_spatial and 0 <= self.n_beta <= self.n_spatial):
            raise SectorError(
                f"electron counts ({self.n_alpha}, {self.n_beta}) exceed {self.n_spatial} orbitals"
            )

    @property
    def n_spin_orbitals(self) -> int:
        return 2 * self.n_spatial

    @property
    def n_electrons(self) -> int:
        return self.n_alpha + self.n_beta

    @property
    def closed_shell(self) -> bool:
        return self.n_alpha == self.n_beta

    def reference(self) -> Determinant:
        return Determinant((1 << self.n_alpha) - 1, (1 << self.n_beta) - 1)

    def occupied_spin_orbitals(self) -> list[int]:
        return bits(int(self.reference().mask))

    def virtual_spin_orbitals(self) -> list[int]:
        occ = self.reference().mask
        return [p for p in range(self.n_spin_orbitals) if not (occ >> p) & 1]

    def sector(self) -> DeterminantBasis:
        return enumerate_sector(self, self.n_alpha, self.n_beta)


@dataclass(frozen=True, order=True)
class Determinant:
    alpha_mask: int
    beta_mask: int

    @classmethod
    def from_spin_orbitals(cls, occupied: Iterable[int]) -> Determinant:
        mask = 0
        for p in occupied:
            mask |= 1 << p
        return _from_mask(mask)

    @property
    def mask(self) -> int:
        a, b, m, p = self.alpha_mask, self.beta_mask, 0, 0
        while a or b:
            m |= (a & 1) << (2 * p) | (b & 1) << (2 * p + 1)
            a >>= 1
            b >>= 1
            p += 1
        return m

    @property
    def n_alpha(self) -> int:
        return int(self.alpha_mask).bit_count()

    @property
    def n_beta(self) -> int:
        return int(self.beta_mask).bit_count()

    def occupied(self) -> list[int]:
        return bits(self.mask)

    def __repr__(self):
        return f"Determinant({self.occupied()})"


class DeterminantBasis(Sequence):
    """Ordered determinant list with vectorized bitmask lookup.

    Index lookup is by spin-orbital mask; the list order is whatever the
    constructor received (canonical for sectors, reference-first for CAS
    bases).
    """

    def __init__(self, alpha, beta, orbitals: SpinOrbitalBasis):
        self.alpha = np.asarray(alpha, dtype=np.int64)
        self.beta = np.asarray(beta, dtype=np.int64)
        self.orbitals = orbitals
        self.masks = interleave(self.alpha, self.beta)
        self._order = np.argsort(self.masks, kind="stable")
        self._sorted = self.masks[self._order]
        if len(self._sorted) > 1 and np.any(self._sorted[1:] == self._sorted[:-1]):
            raise SectorError("duplicate determinants in basis")

    @classmethod
    def from_determinants(cls, dets: Iterable[Determinant], orbitals: SpinOrbitalBasis):
        dets = list(dets)
        return cls([d.alpha_mask for d in dets], [d.beta_mask for d in dets], orbitals)

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [self[j] for j in range(*i.indices(len(self)))]
        return Determinant(int(self.alpha[i]), int(self.beta[i]))

    def __iter__(self) -> Iterator[Determinant]:
        for a, b in zip(self.alpha.tolist(), self.beta.tolist()):
            yield Determinant(a, b)

    def index_of(self, masks):
        """Positions of spin-orbital masks in this basis, ``-1`` where absent."""
        masks = np.asarray(masks, dtype=np.int64)
        if len(self._sorted) == 0:
            return np.full(masks.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self._sorted, masks)
        pos = np.clip(pos, 0, len(self._sorted) - 1)
        found = self._sorted[pos] == masks
        return np.where(found, self._order[pos], -1)

    def index(self, det: Determinant) -> int:
        i = int(self.index_of(det.mask))
        if i < 0:
            raise ValueError(f"{det!r} not in basis")
        return i

    def occupations(self) -> np.ndarray:
        """Boolean occupation table, shape ``(len, n_spin_orbitals)``."""
        n = self.orbitals.n_spin_orbitals
        return ((self.masks[:, None] >> np.arange(n)) & 1).astype(bool)


def enumerate_sector(basis: SpinOrbitalBasis, n_alpha: int, n_beta: int) -> DeterminantBasis:
    """All determinants with the given alpha/beta counts in (alpha, beta) order."""
    n = basis.n_spatial
    if not (0 <= n_alpha <= n and 0 <= n_beta <= n):
        raise SectorError(f"sector ({n_alpha}, {n_beta}) invalid for {n} spatial orbitals")
    strings_a = _strings(n, n_alpha)
    strings_b = _strings(n, n_beta)
    alpha = np.repeat(strings_a, len(strings_b))
    beta = np.tile(strings_b, len(strings_a))
    assert len(alpha) == comb(n, n_alpha) * comb(n, n_beta)
    return DeterminantBasis(alpha, beta, SpinOrbitalBasis(n, n_alpha, n_beta))


def _strings(n: int, k: int) -> np.ndarray:
    masks = [sum(1 << i for i in c) for c in combinations(range(n), k)]
    return np.array(sorted(masks), dtype=np.int64)


@dataclass(frozen=True)
class OperatorString:
    """Product of creation/annihilation operators, written left to right.

    ``ops`` holds ``(spin_orbital, is_creation)`` pairs; the rightmost operator
    acts first.
    """

    ops: tuple[tuple[int, bool], ...]
    coeff: float = 1.0

    @classmethod
    def parse(cls, text: str, coeff: float = 1.0) -> OperatorString:
        """Parse ``"2^ 0"``-style strings (``^`` marks creation)."""
        ops = []
        for tok in text.split():
            ops.append((int(tok.rstrip("^")), tok.endswith("^")))
        return cls(tuple(ops), coeff)

    def adjoint(self) -> OperatorString:
        return OperatorString(tuple((p, not c) for p, c in reversed(self.ops)), self.coeff)


def apply_string_masks(ops: Sequence[tuple[int, bool]], masks):
    """Vectorized application of an operator string to many spin-orbital masks.

    Returns ``(phases, new_masks)``; ``phases`` is 0 where the string
    annihilates the determinant.
    """
    m = np.array(masks, dtype=np.int64, copy=True)
    ph = np.ones(m.shape, dtype=np.int8)
    for p, create in reversed(ops):
        bit = np.int64(1) << np.int64(p)
        occupied = (m & bit) != 0
        ok = ~occupied if create else occupied
        ph[~ok] = 0
        odd = (popcount(m & (bit - 1)) & 1).astype(bool)
        ph[odd] = -ph[odd]
        m = m ^ bit
    return ph, m


def apply_string(op: OperatorString, d: Determinant) -> tuple[int, Determinant]:
    """Apply ``op`` to ``d``; phase 0 signals a vanishing result.

    The scalar prefactor ``op.coeff`` is not folded into the phase.
    """
    mask = d.mask
    phase = 1
    for p, create in reversed(op.ops):
        occupied = (mask >> p) & 1
        if occupied == create:
            return 0, d
        if (mask & ((1 << p) - 1)).bit_count() & 1:
            phase = -phase
        mask ^= 1 << p
    return phase, _from_mask(mask)


def _from_mask(mask: int) -> Determinant:
    a = b = p = 0
    while mask:
        a |= (mask & 1) << p
        b |= ((mask >> 1) & 1) << p
        mask >>= 2
        p += 1
    return Determinant(a, b)


def excitation_between(d1: Determinant, d2: Determinant, max_rank: int | None = None):
    """Excitation that maps ``d1`` onto ``d2``.

    Returns ``(rank, occ, virt, phase)`` with ``E d1 = phase * d2`` for the
    canonical excitation ``E = a†_{v1} ... a†_{vk} a_{ok} ... a_{o1}``, or
    ``None`` when the rank exceeds ``max_rank``.
    """
    if (d1.n_alpha, d1.n_beta) != (d2.n_alpha, d2.n_beta):
        raise SectorError(f"{d1!r} and {d2!r} belong to different sectors")
    m1, m2 = d1.mask, d2.mask
    rank = (m1 ^ m2).bit_count() // 2
    if max_rank is not None and rank > max_rank:
        return None
    occ = bits(m1 & ~m2)
    virt = bits(m2 & ~m1)
    phase, target = apply_string(excitation_string(occ, virt), d1)
    assert target == d2 and phase != 0
    return rank, tuple(occ), tuple(virt), phase


def excitation_string(occ: Sequence[int], virt: Sequence[int]) -> OperatorString:
    """Canonical string ``a†_{v1} .. a†_{vk} a_{ok} .. a_{o1}`` (ascending tuples)."""
    ops = [(v, True) for v in virt] + [(o, False) for o in reversed(occ)]
    return OperatorString(tuple(ops))


@dataclass
class StateVector:
    """Real amplitudes over an ordered determinant basis."""

    basis: DeterminantBasis
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (len(self.basis),):
            raise ValueError(f"{self.coeffs.shape[0]} coefficients for {len(self.basis)} determinants")

    @classmethod
    def single(cls, basis: DeterminantBasis, det: Determinant) -> StateVector:
        c = np.zeros(len(basis))
        c[basis.index(det)] = 1.0
        return cls(basis, c)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def normalize(self) -> StateVector:
        n = self.norm()
        if n == 0.0:
            raise ValueError("cannot normalize the zero vector")
        self.coeffs = self.coeffs / n
        return self

    def overlap(self, other: StateVector) -> float:
        return float(self.coeffs @ other.coeffs)

    def coeff(self, det: Determinant) -> float:
        i = int(self.basis.index_of(det.mask))
        return 0.0 if i < 0 else float(self.coeffs[i])

    def copy(self) -> StateVector:
        return StateVector(self.basis, self.coeffs.copy())
