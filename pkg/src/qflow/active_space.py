"""Closed-shell active spaces (SES choices), CAS bases and projectors."""

from __future__ import annotations

import re
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from qflow.fock import DeterminantBasis, SpinOrbitalBasis, SectorError


@dataclass(frozen=True)
class ActiveSpace:
    """Chosen occupied and virtual spatial orbitals; both spins are active."""

    occ: tuple[int, ...]
    virt: tuple[int, ...]
    id: int = 0

    def __post_init__(self):
        if set(self.occ) & set(self.virt):
            raise ValueError(f"occupied {self.occ} and virtual {self.virt} overlap")
        object.__setattr__(self, "occ", tuple(sorted(self.occ)))
        object.__setattr__(self, "virt", tuple(sorted(self.virt)))

    @property
    def spatial(self) -> tuple[int, ...]:
        return tuple(sorted(self.occ + self.virt))

    @property
    def spin_orbitals(self) -> frozenset[int]:
        return frozenset(2 * p + s for p in self.spatial for s in (0, 1))

    @property
    def mask(self) -> int:
        m = 0
        for p in self.spin_orbitals:
            m |= 1 << p
        return m

    @property
    def n_electrons(self) -> int:
        return 2 * len(self.occ)

    @property
    def n_orbitals(self) -> int:
        return len(self.occ) + len(self.virt)

    def label(self) -> str:
        return f"occ:[{','.join(map(str, self.occ))}],virt:[{','.join(map(str, self.virt))}]"

    def contains(self, exc) -> bool:
        m = self.mask
        return all((m >> p) & 1 for p in exc.occ + exc.virt)

    def validate(self, orbitals: SpinOrbitalBasis):
        if not orbitals.closed_shell:
            raise SectorError("active spaces require a closed-shell reference")
        n_occ = orbitals.n_alpha
        if any(not 0 <= p < n_occ for p in self.occ):
            raise ValueError(f"{self.label()}: occupied index outside 0..{n_occ - 1}")
        if any(not n_occ <= p < orbitals.n_spatial for p in self.virt):
            raise ValueError(f"{self.label()}: virtual index outside {n_occ}..{orbitals.n_spatial - 1}")


_SPACE_RE = re.compile(r"^\s*occ\s*:\s*\[([\d,\s]*)\]\s*,\s*virt\s*:\s*\[([\d,\s]*)\]\s*$")


def parse_space(text: str, space_id: int = 0) -> ActiveSpace:
    """Parse ``occ:[0,1],virt:[4,5]``."""
    m = _SPACE_RE.match(text)
    if not m:
        raise ValueError(f"malformed active space {text!r}; expected occ:[..],virt:[..]")
    occ = tuple(int(x) for x in m.group(1).replace(",", " ").split())
    virt = tuple(int(x) for x in m.group(2).replace(",", " ").split())
    return ActiveSpace(occ, virt, space_id)


def enumerate_spaces(orbitals: SpinOrbitalBasis, n_occ_pick: int, n_virt_pick: int) -> list[ActiveSpace]:
    """All (n_occ_pick occupied, n_virt_pick virtual) spaces in lexicographic order."""
    if not orbitals.closed_shell:
        raise SectorError("active spaces require a closed-shell reference")
    occ = range(orbitals.n_alpha)
    virt = range(orbitals.n_alpha, orbitals.n_spatial)
    if not (0 <= n_occ_pick <= len(occ) and 0 <= n_virt_pick <= len(virt)):
        raise ValueError(
            f"cannot pick {n_occ_pick} occupied / {n_virt_pick} virtual orbitals "
            f"from {len(occ)} / {len(virt)}"
        )
    spaces = []
    for o, v in product(combinations(occ, n_occ_pick), combinations(virt, n_virt_pick)):
        spaces.append(ActiveSpace(o, v, len(spaces)))
    return spaces


def template_picks(ne: int, no: int) -> tuple[int, int]:
    """Occupied/virtual spatial picks for a closed-shell (ne e, no o) space."""
    if ne % 2 or ne < 0 or no * 2 < ne:
        raise ValueError(f"({ne}e,{no}o) is not a closed-shell active-space template")
    return ne // 2, no - ne // 2


def cas_basis(space: ActiveSpace, orbitals: SpinOrbitalBasis) -> DeterminantBasis:
    """Complete active-space determinants, reference first.

    Inactive occupied orbitals stay doubly occupied and inactive virtuals
    empty; the active electrons are distributed over the active orbitals in
    every way.
    """
    space.validate(orbitals)
    ref = orbitals.reference()
    frozen_a = ref.alpha_mask & ~sum(1 << p for p in space.spatial)
    k = len(space.occ)
    strings = sorted(sum(1 << p for p in c) for c in combinations(space.spatial, k))
    strings = [s | frozen_a for s in strings]
    alpha = np.repeat(strings, len(strings))
    beta = np.tile(strings, len(strings))
    ref_pos = np.nonzero((alpha == ref.alpha_mask) & (beta == ref.beta_mask))[0][0]
    order = [ref_pos] + [i for i in range(len(alpha)) if i != ref_pos]
    return DeterminantBasis(alpha[order], beta[order], orbitals)


def classify_excitation(exc, space: ActiveSpace) -> str:
    return "internal" if space.contains(exc) else "external"


def split(store, space: ActiveSpace):
    """Partition an amplitude store into ``(internal, external)`` stores."""
    internal = store.filter(space.contains)
    external = store.filter(lambda e: not space.contains(e))
    return internal, external


def projectors(space: ActiveSpace, basis: DeterminantBasis) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Diagonals of ``P``, ``Q_int`` and ``Q_ext`` over a full-sector basis."""
    ref_mask = basis.orbitals.reference().mask
    inactive = ~space.mask
    p = (basis.masks == ref_mask).astype(float)
    in_cas = ((basis.masks ^ ref_mask) & inactive) == 0
    q_int = (in_cas & (basis.masks != ref_mask)).astype(float)
    q_ext = (~in_cas).astype(float)
    return p, q_int, q_ext


def embed_indices(cas: DeterminantBasis, full: DeterminantBasis) -> np.ndarray:
    idx = full.index_of(cas.masks)
    if np.any(idx < 0):
        raise ValueError("CAS basis is not contained in the full basis")
    return idx
