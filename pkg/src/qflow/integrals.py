"""One- and two-electron integral storage, FCIDUMP and JSON interchange."""

from __future__ import annotations

import io
import json
import logging
import re
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product

import numpy as np

log = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-10


class IntegralFormatError(ValueError):
    """Base class for integral file problems."""


class FcidumpParseError(IntegralFormatError):
    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line.strip()!r}")
        self.lineno = lineno


class FcidumpHeaderError(IntegralFormatError):
    pass


class FcidumpConsistencyError(IntegralFormatError):
    pass


class SyntheticFormatError(IntegralFormatError):
    pass


def _perms(p, q, r, s):
    return {
        (p, q, r, s), (q, p, r, s), (p, q, s, r), (q, p, s, r),
        (r, s, p, q), (s, r, p, q), (r, s, q, p), (s, r, q, p),
    }


def symmetrize_eri(g: np.ndarray) -> np.ndarray:
    """Average a chemist-notation tensor over its 8 permutational images."""
    g = np.asarray(g, dtype=float)
    return (
        g + g.transpose(1, 0, 2, 3) + g.transpose(0, 1, 3, 2) + g.transpose(1, 0, 3, 2)
        + g.transpose(2, 3, 0, 1) + g.transpose(3, 2, 0, 1) + g.transpose(2, 3, 1, 0)
        + g.transpose(3, 2, 1, 0)
    ) / 8.0


@dataclass(eq=False)
class IntegralStore:
    """Hamiltonian integrals over spatial orbitals (Hartree).

    ``g[p, q, r, s]`` is the chemist-notation integral ``(pq|rs)``.
    Indices are 0-based in memory.
    """

    n_orb: int
    n_elec: int
    ms2: int
    h: np.ndarray
    g: np.ndarray
    e_core: float = 0.0
    orbsym: list[int] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.g = np.asarray(self.g, dtype=float)
        n = self.n_orb
        if self.h.shape != (n, n):
            raise SyntheticFormatError(f"h has shape {self.h.shape}, expected {(n, n)}")
        if self.g.shape != (n, n, n, n):
            raise SyntheticFormatError(f"g has shape {self.g.shape}, expected {(n,) * 4}")
        if not np.allclose(self.h, self.h.T, atol=SYMMETRY_TOL, rtol=0):
            raise SyntheticFormatError("h is not symmetric")
        if n and np.max(np.abs(symmetrize_eri(self.g) - self.g)) > SYMMETRY_TOL:
            raise SyntheticFormatError("g lacks 8-fold permutational symmetry")
        if (self.n_elec + self.ms2) % 2 or abs(self.ms2) > self.n_elec:
            raise SyntheticFormatError(f"inconsistent NELEC={self.n_elec}, MS2={self.ms2}")
        self.e_core = float(self.e_core)

    @property
    def n_alpha(self) -> int:
        return (self.n_elec + self.ms2) // 2

    @property
    def n_beta(self) -> int:
        return (self.n_elec - self.ms2) // 2

    def orbitals(self):
        from qflow.fock import SpinOrbitalBasis

        return SpinOrbitalBasis(self.n_orb, self.n_alpha, self.n_beta)

    @cached_property
    def h_spin(self) -> np.ndarray:
        """One-electron integrals over interleaved spin orbitals."""
        return np.kron(self.h, np.eye(2))

    @cached_property
    def antisymmetrized(self) -> np.ndarray:
        """``<pq||rs> = <pq|rs> - <pq|sr>`` over interleaved spin orbitals."""
        n = self.n_orb
        # <pq|rs> = (pr|qs) delta(sp,sr) delta(sq,ss)
        phys = self.g.transpose(0, 2, 1, 3)
        spin = np.zeros((2, 2, 2, 2))
        for a, b in product(range(2), repeat=2):
            spin[a, b, a, b] = 1.0
        full = np.einsum("pqrs,abcd->paqbrcsd", phys, spin).reshape((2 * n,) * 4)
        return full - full.transpose(0, 1, 3, 2)

    def allclose(self, other: IntegralStore, tol: float = 1e-12) -> bool:
        return (
            (self.n_orb, self.n_elec, self.ms2) == (other.n_orb, other.n_elec, other.ms2)
            and abs(self.e_core - other.e_core) <= tol
            and np.allclose(self.h, other.h, atol=tol, rtol=0)
            and np.allclose(self.g, other.g, atol=tol, rtol=0)
        )

    def permuted(self, order) -> IntegralStore:
        """Store with orbitals relabelled so new orbital ``i`` is old ``order[i]``."""
        o = np.asarray(order)
        return IntegralStore(
            self.n_orb, self.n_elec, self.ms2, self.h[np.ix_(o, o)],
            self.g[np.ix_(o, o, o, o)], self.e_core,
        )


_HEADER_END = re.compile(r"(&END|/)\s*$", re.IGNORECASE)
_KEYVAL = re.compile(r"([A-Za-z_][A-Za-z0-9_]*)\s*=\s*([^=]*?)(?=\s*[A-Za-z_][A-Za-z0-9_]*\s*=|$)")


def _parse_header(text: str) -> dict[str, list[str]]:
    text = re.sub(r"^\s*&FCI", "", text.strip(), flags=re.IGNORECASE)
    text = _HEADER_END.sub("", text.strip())
    out = {}
    for key, val in _KEYVAL.findall(text.replace("\n", " ")):
        vals = [v for v in re.split(r"[,\s]+", val.strip()) if v]
        out[key.upper()] = vals
    return out


def _read_text(source) -> str:
    if isinstance(source, str):
        return source
    if isinstance(source, bytes):
        return source.decode()
    return source.read()


def parse_fcidump(source) -> IntegralStore:
    """Parse FCIDUMP text (a string or a text stream).

    The namelist header may be terminated by ``&END`` or ``/``.  Orbital
    energy records ``(i, 0, 0, 0)`` and ORBSYM labels are accepted and
    ignored.
    """
    lines = _read_text(source).splitlines()
    header_lines = []
    body_start = None
    for i, line in enumerate(lines):
        header_lines.append(line)
        if _HEADER_END.search(line.strip()):
            body_start = i + 1
            break
    if body_start is None:
        raise FcidumpHeaderError("namelist header is not terminated by &END or /")
    header = _parse_header("\n".join(header_lines))
    for key in ("NORB", "NELEC"):
        if key not in header or not header[key]:
            raise FcidumpHeaderError(f"header is missing {key}")
    try:
        n = int(header["NORB"][0])
        nelec = int(header["NELEC"][0])
        ms2 = int(header.get("MS2", ["0"])[0])
    except ValueError as exc:
        raise FcidumpHeaderError(f"non-integer header value: {exc}") from None
    orbsym = [int(x) for x in header.get("ORBSYM", [])] or None

    h_vals: dict[tuple[int, int], float] = {}
    g_vals: dict[tuple[int, int, int, int], float] = {}
    e_core = None
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise FcidumpParseError(lineno, line, "expected 5 columns")
        try:
            val = float(fields[0].replace("D", "E").replace("d", "e"))
            i, j, k, l = (int(x) for x in fields[1:])
        except ValueError:
            raise FcidumpParseError(lineno, line, "malformed record") from None
        if min(i, j, k, l) < 0 or max(i, j, k, l) > n:
            raise FcidumpParseError(lineno, line, f"index outside 0..{n}")
        if i == j == k == l == 0:
            e_core = _merge(e_core, val, lineno, "core energy")
        elif k == l == 0 and j == 0:
            log.debug("ignoring orbital energy record on line %d", lineno)
        elif k == l == 0:
            key = (max(i, j) - 1, min(i, j) - 1)
            h_vals[key] = _merge(h_vals.get(key), val, lineno, f"h{key}")
        elif 0 in (i, j, k, l):
            raise FcidumpParseError(lineno, line, "partial zero index pattern")
        else:
            key = _canonical_eri(i - 1, j - 1, k - 1, l - 1)
            g_vals[key] = _merge(g_vals.get(key), val, lineno, f"g{key}")

    h = np.zeros((n, n))
    for (i, j), v in h_vals.items():
        h[i, j] = h[j, i] = v
    g = np.zeros((n, n, n, n))
    for (i, j, k, l), v in g_vals.items():
        for idx in _perms(i, j, k, l):
            g[idx] = v
    return IntegralStore(n, nelec, ms2, h, g, e_core or 0.0, orbsym)


def _merge(old, new, lineno, what):
    if old is not None and abs(old - new) > 1e-10:
        raise FcidumpConsistencyError(f"line {lineno}: conflicting duplicate {what}: {old!r} vs {new!r}")
    return new


def _canonical_eri(i, j, k, l):
    ij = (max(i, j), min(i, j))
    kl = (max(k, l), min(k, l))
    return ij + kl if ij >= kl else kl + ij


def serialize_fcidump(store: IntegralStore) -> str:
    """FCIDUMP text with symmetry-unique records in a fixed order.

    Two-body records come first (``i>=j``, ``k>=l``, ``ij>=kl``, nonzero
    only), then the lower triangle of ``h`` (diagonal always written), then
    the core energy.
    """
    n = store.n_orb
    out = io.StringIO()
    out.write(f" &FCI NORB={n},NELEC={store.n_elec},MS2={store.ms2},\n")
    sym = store.orbsym or [1] * n
    out.write("  ORBSYM=" + ",".join(str(s) for s in sym) + ",\n")
    out.write("  ISYM=1,\n &END\n")
    fmt = "{: .16e} {:4d} {:4d} {:4d} {:4d}\n"
    for i in range(n):
        for j in range(i + 1):
            for k in range(i + 1):
                for l in range(k + 1):
                    if (i, j) < (k, l):
                        continue
                    v = store.g[i, j, k, l]
                    if v != 0.0:
                        out.write(fmt.format(v, i + 1, j + 1, k + 1, l + 1))
    for i in range(n):
        for j in range(i + 1):
            v = store.h[i, j]
            if v != 0.0 or i == j:
                out.write(fmt.format(v, i + 1, j + 1, 0, 0))
    out.write(fmt.format(store.e_core, 0, 0, 0, 0))
    return out.getvalue()


def parse_synthetic(source) -> IntegralStore:
    """Parse the JSON form ``{n_orb, n_elec, ms2, e_core, h, g}``."""
    try:
        obj = json.loads(_read_text(source))
    except json.JSONDecodeError as exc:
        raise SyntheticFormatError(f"invalid JSON: {exc}") from None
    missing = {"n_orb", "n_elec", "h", "g"} - set(obj)
    if missing:
        raise SyntheticFormatError(f"missing keys: {sorted(missing)}")
    try:
        h = np.array(obj["h"], dtype=float)
        g = np.array(obj["g"], dtype=float)
    except ValueError as exc:
        raise SyntheticFormatError(f"ragged integral arrays: {exc}") from None
    return IntegralStore(
        int(obj["n_orb"]), int(obj["n_elec"]), int(obj.get("ms2", 0)), h, g,
        float(obj.get("e_core", 0.0)),
    )


def serialize_synthetic(store: IntegralStore, **extra) -> str:
    obj = {
        "schema_version": 1,
        "n_orb": store.n_orb,
        "n_elec": store.n_elec,
        "ms2": store.ms2,
        "e_core": store.e_core,
        "h": store.h.tolist(),
        "g": store.g.tolist(),
    }
    obj.update(extra)
    return json.dumps(obj, indent=1) + "\n"


def load(path, fmt: str | None = None) -> IntegralStore:
    """Read a store from ``path``; format inferred from the suffix if not given."""
    path = str(path)
    if fmt is None:
        fmt = "json" if path.endswith(".json") else "fcidump"
    with open(path) as fh:
        text = fh.read()
    if fmt == "json":
        return parse_synthetic(text)
    if fmt == "fcidump":
        return parse_fcidump(text)
    raise ValueError(f"unknown integral format {fmt!r}")
