"""QFlow, sub-QFlow and the non-Hermitian commutative flow.

A flow couples many small active-space problems through one global set of
cluster amplitudes.  Each amplitude is owned by the first space (in
importance order) whose orbitals contain it; when a space is visited, every
amplitude that is not internal to it is folded into its effective
Hamiltonian, and the space takes a single gradient step on the
amplitudes it owns.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from qflow.active_space import ActiveSpace, cas_basis, embed_indices, enumerate_spaces, template_picks
from qflow.cluster import (
    BACKGROUND,
    ITERATIVE,
    AmplitudeStore,
    Excitation,
    GeneratorSet,
    all_excitations,
    cluster_analyze,
    exp_action,
    exp_nilpotent,
    t_matrix,
    trotter_state,
)
from qflow.downfolding import heff_bch, heff_ses_nonhermitian, heff_unitary_exact
from qflow.fock import StateVector
from qflow.hamiltonian import HamiltonianMatrix, build_matrix, fock_diagonal, reference_energy
from qflow.integrals import IntegralStore
from qflow.oracle import antisymmetric_expm, ground_state, nonsymmetric_eig
from qflow.perturbative import DegeneracyLog, first_order_sd, second_order_triples

log = logging.getLogger(__name__)

MODES = ("qflow", "subflow", "ccflow", "bloch")


class FlowError(RuntimeError):
    pass


class FlowDivergence(FlowError):
    pass


class FlowNotConverged(FlowDivergence):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class FlowConfig:
    """Flow hyperparameters; ``to_text``/``from_text`` use flat ``key = value`` lines."""

    mode: str = "qflow"
    ne: int = 4
    no: int = 4
    cycles_max: int = 50
    eta: float = 0.1
    energy_tol: float = 1e-8
    grad_tol: float = 1e-10
    trotter_rank: int = 1
    heff: str = "exact"
    select_threshold: float | None = None
    select_topk: int | None = None
    background: bool = True
    seed: int = 0
    max_rank: int = 3
    jacobi: bool = False
    reselect: bool = False
    spot_check: bool = True
    order: int = 1
    space: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.trotter_rank < 1:
            raise ConfigError("trotter rank must be >= 1")
        if self.cycles_max < 1:
            raise ConfigError("cycles_max must be >= 1")
        if self.max_rank < 1:
            raise ConfigError("max_rank must be >= 1")
        if self.order not in (1, 2):
            raise ConfigError("perturbative order must be 1 or 2")
        self.commutator_rank()
        if self.mode == "subflow":
            if (self.select_threshold is None) == (self.select_topk is None):
                raise ConfigError("subflow needs exactly one of select_threshold / select_topk")
            if self.select_topk is not None and self.select_topk < 0:
                raise ConfigError("select_topk must be >= 0")
        try:
            template_picks(self.ne, self.no)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def commutator_rank(self) -> int | None:
        """``None`` for exact conjugation, ``k`` for ``bch:k``."""
        if self.heff == "exact":
            return None
        if self.heff.startswith("bch:"):
            try:
                k = int(self.heff[4:])
            except ValueError:
                k = 0
            if k >= 1:
                return k
        raise ConfigError(f"heff must be 'exact' or 'bch:k' with k >= 1, got {self.heff!r}")

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, bool):
                v = "on" if v else "off"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> FlowConfig:
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for n, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"config line {n}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in types:
                raise ConfigError(f"config line {n}: unknown key {key!r}")
            kw[key] = _coerce(types[key], val, n)
        return cls(**kw)

    def hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


def _coerce(type_name: str, val: str, n: int):
    if "None" in type_name and val.lower() == "none":
        return None
    try:
        if "bool" in type_name:
            if val.lower() in ("on", "true", "1", "yes"):
                return True
            if val.lower() in ("off", "false", "0", "no"):
                return False
            raise ValueError(val)
        if "int" in type_name:
            return int(val)
        if "float" in type_name:
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"config line {n}: bad value {val!r}") from None


# trace ----------------------------------------------------------------

CSV_COLUMNS = ("cycle", "space_id", "occ", "virt", "e_before", "e_after", "delta_e", "grad_norm", "params")


@dataclass(frozen=True)
class TraceRecord:
    cycle: int
    step: int
    space_id: int
    occ: tuple[int, ...]
    virt: tuple[int, ...]
    e_before: float
    e_after: float
    grad_norm: float
    params: int

    @property
    def delta_e(self) -> float:
        return self.e_after - self.e_before


@dataclass
class FlowTrace:
    """Append-only record of every active-space visit."""

    records: list[TraceRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def append(self, rec: TraceRecord):
        if self.records and rec.step <= self.records[-1].step:
            raise FlowError("trace steps must increase")
        self.records.append(rec)

    def next_step(self) -> int:
        return self.records[-1].step + 1 if self.records else 0

    def cycle(self, c: int) -> list[TraceRecord]:
        return [r for r in self.records if r.cycle == c]

    def to_csv(self, comment: str | None = None) -> str:
        buf = io.StringIO()
        if comment:
            buf.write(f"# {comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([
                r.cycle, r.space_id, " ".join(map(str, r.occ)), " ".join(map(str, r.virt)),
                repr(r.e_before), repr(r.e_after), repr(r.delta_e), repr(r.grad_norm), r.params,
            ])
        return buf.getvalue()

    def to_json(self, **extra) -> str:
        recs = []
        for r in self.records:
            d = asdict(r)
            d["occ"], d["virt"] = list(r.occ), list(r.virt)
            d["delta_e"] = r.delta_e
            recs.append(d)
        return json.dumps({"schema_version": 1, **self.meta, **extra, "records": recs}, indent=1) + "\n"


# single-space pieces ----------------------------------------------------


def importance_order(spaces: list[ActiveSpace], h: HamiltonianMatrix) -> list[tuple[ActiveSpace, float]]:
    """Spaces sorted by CAS-projection correlation energy, most negative first.

    Metrics are rounded to 1e-10 Hartree before sorting so that symmetry-
    equivalent spaces tie exactly and fall back to id order.
    """
    ref = h.basis.orbitals.reference()
    e_ref = reference_energy(h.store, ref)
    scored = []
    for s in spaces:
        cas = cas_basis(s, h.basis.orbitals)
        idx = embed_indices(cas, h.basis)
        block = h.matrix[idx][:, idx].toarray()
        e0 = float(np.linalg.eigvalsh(0.5 * (block + block.T))[0])
        scored.append((s, e0 - e_ref))
    return sorted(scored, key=lambda sm: (round(sm[1], 10), sm[0].id))


def internal_state(gens: GeneratorSet, theta) -> np.ndarray:
    """``exp(sigma_int) |Phi>`` on the CAS basis (reference at index 0)."""
    phi = np.zeros(len(gens.basis))
    phi[0] = 1.0
    return exp_action(gens.matrix(theta), phi, tol=1e-15)


def commutator_gradient(heff: np.ndarray, gens: GeneratorSet, psi: np.ndarray) -> np.ndarray:
    """``g_k = <psi|[H, tau_k]|psi> = 2 (H psi) . (tau_k psi)`` for all generators."""
    w = heff @ psi
    contrib = gens.signs * (w[gens.rows] * psi[gens.cols] - w[gens.cols] * psi[gens.rows])
    return 2.0 * np.bincount(gens.owner, weights=contrib, minlength=len(gens))


@dataclass
class StepResult:
    theta: np.ndarray
    e_before: float
    e_after: float
    gradient: np.ndarray
    grad_norm: float


def gradient_step(heff: np.ndarray, gens: GeneratorSet, theta, eta: float, owned=None) -> StepResult:
    """One steepest-descent update ``theta_k -= eta g_k`` on the owned parameters.

    Energies are ``<psi|H|psi>`` with ``psi = exp(sigma_int(theta))|Phi>``
    before and after the update.
    """
    theta = np.asarray(theta, dtype=float)
    owned = np.ones(len(theta), dtype=bool) if owned is None else np.asarray(owned, dtype=bool)
    psi = internal_state(gens, theta)
    e_before = float(psi @ heff @ psi)
    g = commutator_gradient(heff, gens, psi)
    if not np.all(np.isfinite(g)):
        raise FlowDivergence("non-finite gradient")
    g = np.where(owned, g, 0.0)
    new = theta - eta * g
    psi = internal_state(gens, new)
    e_after = float(psi @ heff @ psi)
    return StepResult(new, e_before, e_after, g, float(np.linalg.norm(g)))


def frame_energy(heff: np.ndarray, gens: GeneratorSet, psi: np.ndarray, k: int, delta: float) -> float:
    """``<psi|exp(-d tau_k) H exp(d tau_k)|psi>``; its slope at 0 is ``g_k``."""
    u = antisymmetric_expm(delta * gens.single(k).toarray())
    v = u @ psi
    return float(v @ heff @ v)


def select_subflow(records: list[TraceRecord], threshold: float | None = None, topk: int | None = None) -> list[int]:
    """Space ids whose cycle records pass the selection rule, sorted by id.

    ``threshold`` keeps ``|dE| >= threshold``; ``topk`` keeps the ``K``
    largest ``|dE|`` with ties broken by lower id.  ``topk = 0`` is an
    explicit empty selection; an empty threshold selection is an error.
    """
    if (threshold is None) == (topk is None):
        raise ConfigError("give exactly one of threshold / topk")
    best: dict[int, float] = {}
    for r in records:
        best[r.space_id] = max(best.get(r.space_id, 0.0), abs(r.delta_e))
    if threshold is not None:
        chosen = [i for i, d in best.items() if d >= threshold]
        if not chosen:
            biggest = max(best.values(), default=0.0)
            raise FlowError(
                f"no space reaches |dE| >= {threshold:g} (largest is {biggest:.3e}); lower the threshold"
            )
    else:
        ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
        chosen = [i for i, _ in ranked[:topk]]
    return sorted(chosen)


# engine ---------------------------------------------------------------


@dataclass
class SpaceSlot:
    space: ActiveSpace
    metric: float
    internal: list[Excitation]
    gens: GeneratorSet
    global_index: np.ndarray  # position of each internal key in the global parameter vector
    owned: np.ndarray  # bool per internal key
    ext_mask: np.ndarray  # bool over global params + background: not internal to this space


@dataclass
class FlowState:
    """Global amplitudes with ownership; ``energy`` is the main-space energy."""

    keys: list[Excitation]
    theta: np.ndarray
    owner: list[int]
    frozen: np.ndarray
    background_keys: list[Excitation]
    background: np.ndarray
    cycle: int = 0
    energy: float = math.nan
    selected: list[int] | None = None

    def amplitudes(self) -> AmplitudeStore:
        out = AmplitudeStore()
        for k, v, fz in zip(self.keys, self.theta, self.frozen):
            out.set(k, v, BACKGROUND if fz else ITERATIVE)
        for k, v in zip(self.background_keys, self.background):
            out.set(k, v, BACKGROUND)
        return out

    def owned_count(self, space_id: int) -> int:
        return sum(1 for o in self.owner if o == space_id)


def _as_hamiltonian(source) -> HamiltonianMatrix:
    if isinstance(source, HamiltonianMatrix):
        return source
    if isinstance(source, IntegralStore):
        return build_matrix(source, source.orbitals().sector())
    raise TypeError(f"expected IntegralStore or HamiltonianMatrix, got {type(source).__name__}")


class FlowEngine:
    """Shared machinery of the Hermitian flows; one instance per run."""

    def __init__(self, config: FlowConfig, source, oracle_energy: float | None = None):
        self.config = config
        self.h = _as_hamiltonian(source)
        self.store = self.h.store
        self.orbitals = self.h.basis.orbitals
        self.reference = self.orbitals.reference()
        self.oracle_energy = oracle_energy
        self.k_bch = config.commutator_rank()
        n_occ, n_virt = template_picks(config.ne, config.no)
        spaces = enumerate_spaces(self.orbitals, n_occ, n_virt)
        self.total_spaces = len(spaces)
        ordered = importance_order(spaces, self.h)
        self.fock = fock_diagonal(self.store, self.reference)
        self.skipped = DegeneracyLog()

        keys, owner, seen = [], [], {}
        per_space = []
        for space, _ in ordered:
            internal = all_excitations(self.orbitals, range(1, config.max_rank + 1), within=space.mask)
            per_space.append(internal)
            for e in internal:
                if e not in seen:
                    seen[e] = len(keys)
                    keys.append(e)
                    owner.append(space.id)
        self.key_index = seen
        ranks = range(1, config.max_rank + 1)
        self.census = self._census(ordered)
        bg_keys = []
        if config.background:
            bg_keys = [e for e in all_excitations(self.orbitals, ranks) if e not in seen]
        self.state = FlowState(
            keys=keys,
            theta=np.zeros(len(keys)),
            owner=owner,
            frozen=np.zeros(len(keys), dtype=bool),
            background_keys=bg_keys,
            background=self._perturbative(bg_keys),
        )
        self.full_gens = GeneratorSet(keys + bg_keys, self.h.basis)
        self.slots = []
        n_all = len(keys) + len(bg_keys)
        for (space, metric), internal in zip(ordered, per_space):
            cas = cas_basis(space, self.orbitals)
            gidx = np.array([seen[e] for e in internal], dtype=int)
            ext = np.ones(n_all, dtype=bool)
            ext[gidx] = False
            self.slots.append(SpaceSlot(
                space, metric, internal, GeneratorSet(internal, cas), gidx,
                np.array([owner[i] == space.id for i in gidx], dtype=bool), ext,
            ))
        self.trace = FlowTrace(meta={
            "mode": config.mode,
            "jacobi": config.jacobi,
            "config_hash": config.hash(),
            "order": [s.space.id for s in self.slots],
            "metrics": [s.metric for s in self.slots],
        })
        self.spot_checks: list[dict] = []
        self.cycle_energies: list[float] = []
        self.active = [True] * len(self.slots)
        self._rng = np.random.default_rng(config.seed)

    def _census(self, ordered):
        """Internal excitations of all ranks, counted over the union of spaces."""
        union = set()
        for space, _ in ordered:
            union.update(all_excitations(self.orbitals, range(1, 2 * len(space.occ) + 1), within=space.mask))
        by_rank: dict[int, int] = {}
        for e in union:
            by_rank[e.rank] = by_rank.get(e.rank, 0) + 1
        return dict(sorted(by_rank.items()))

    def _perturbative(self, keys) -> np.ndarray:
        """First-order S/D and second-order triples on ``keys``; higher ranks zero."""
        sd = first_order_sd(self.store, self.fock, [e for e in keys if e.rank <= 2], log_=self.skipped)
        tr = {}
        if any(e.rank == 3 for e in keys):
            tr = second_order_triples(self.store, self.fock, [e for e in keys if e.rank == 3], log_=self.skipped)
        return np.array([sd.get(e, tr.get(e, 0.0)) for e in keys], dtype=float)

    @property
    def main(self) -> SpaceSlot:
        return self.slots[0]

    def values(self, theta=None) -> np.ndarray:
        theta = self.state.theta if theta is None else theta
        return np.concatenate([theta, self.state.background])

    def heff(self, slot: SpaceSlot, theta=None) -> np.ndarray:
        vals = np.where(slot.ext_mask, self.values(theta), 0.0)
        sigma = self.full_gens.matrix(vals)
        if self.k_bch is None:
            return heff_unitary_exact(self.h, sigma, slot.space).matrix
        return heff_bch(self.h, sigma, slot.space, self.k_bch).matrix

    def _guard(self, e: float):
        if not math.isfinite(e):
            raise FlowDivergence(f"energy became {e}")
        if self.oracle_energy is not None and e < self.oracle_energy - 1.0:
            raise FlowDivergence(f"energy {e:.6f} more than 1 Hartree below the oracle")

    def visit(self, i: int, snapshot=None, commit: bool = True) -> StepResult:
        """Gradient step for slot ``i``; frozen parameters are not moved."""
        slot = self.slots[i]
        hm = self.heff(slot, snapshot)
        source = self.state.theta if snapshot is None else snapshot
        theta = source[slot.global_index]
        movable = slot.owned & ~self.state.frozen[slot.global_index]
        res = gradient_step(hm, slot.gens, theta, self.config.eta, movable)
        self._guard(res.e_after)
        if commit:
            self.state.theta[slot.global_index[movable]] = res.theta[movable]
        if self.config.spot_check and i == 0 and commit and movable.any():
            self._spot_check(hm, slot, theta, res.gradient, movable)
        return res

    def evaluate(self, i: int) -> float:
        slot = self.slots[i]
        hm = self.heff(slot)
        psi = internal_state(slot.gens, self.state.theta[slot.global_index])
        return float(psi @ hm @ psi)

    def _spot_check(self, hm, slot, theta, grad, movable, h: float = 1e-5):
        candidates = np.nonzero(movable)[0]
        k = int(self._rng.choice(candidates))
        psi = internal_state(slot.gens, theta)
        fd = (frame_energy(hm, slot.gens, psi, k, h) - frame_energy(hm, slot.gens, psi, k, -h)) / (2 * h)
        self.spot_checks.append({
            "cycle": self.state.cycle, "space_id": slot.space.id,
            "key": slot.internal[k].label(), "analytic": float(grad[k]), "finite_difference": fd,
        })

    def run_cycle(self):
        st = self.state
        st.cycle += 1
        snapshot = st.theta.copy() if self.config.jacobi else None
        energy = math.nan
        for i, slot in enumerate(self.slots):
            if not self.active[i]:
                if i == 0:
                    energy = self.evaluate(0)
                    self._record(slot, energy, energy, 0.0, 0)
                continue
            res = self.visit(i, snapshot)
            n_moved = int((slot.owned & ~st.frozen[slot.global_index]).sum())
            self._record(slot, res.e_before, res.e_after, res.grad_norm, n_moved)
            if i == 0:
                energy = res.e_after
        st.energy = energy
        self.cycle_energies.append(energy)
        log.info("cycle %d energy %.12f", st.cycle, energy)
        return energy

    def _record(self, slot, e0, e1, gn, n):
        self.trace.append(TraceRecord(
            self.state.cycle, self.trace.next_step(), slot.space.id,
            slot.space.occ, slot.space.virt, e0, e1, gn, n,
        ))

    def converged(self) -> bool:
        e = self.cycle_energies
        return len(e) >= 2 and abs(e[-1] - e[-2]) < self.config.energy_tol

    def freeze_excluded(self, selected: list[int]):
        """Freeze amplitudes owned by unselected spaces at perturbative values."""
        sel = set(selected)
        st = self.state
        for i, slot in enumerate(self.slots):
            self.active[i] = slot.space.id in sel
        idx = [j for j, o in enumerate(st.owner) if o not in sel and not st.frozen[j]]
        if idx:
            st.theta[idx] = self._perturbative([st.keys[j] for j in idx])
            st.frozen[idx] = True
        st.selected = sorted(sel)

    def probe_cycle(self) -> list[TraceRecord]:
        """dE each space would produce now, without committing any update."""
        out = []
        for i, slot in enumerate(self.slots):
            res = self.visit(i, commit=False)
            out.append(TraceRecord(
                self.state.cycle, -1, slot.space.id, slot.space.occ, slot.space.virt,
                res.e_before, res.e_after, res.grad_norm, 0,
            ))
        return out

    def unfreeze(self, selected: list[int]):
        """Reselection: newly selected spaces resume from their frozen values."""
        sel = set(selected)
        st = self.state
        for j, o in enumerate(st.owner):
            if o in sel:
                st.frozen[j] = False
        for i, slot in enumerate(self.slots):
            self.active[i] = slot.space.id in sel
        st.selected = sorted(sel)

    def global_energy(self, n: int | None = None) -> float:
        """``<Psi_N|H|Psi_N>`` with ``Psi_N`` the rank-``N`` Trotter product for the main split."""
        n = n or self.config.trotter_rank
        slot = self.main
        vals = self.values()
        sig_ext = self.full_gens.matrix(np.where(slot.ext_mask, vals, 0.0))
        sig_int = self.full_gens.matrix(np.where(slot.ext_mask, 0.0, vals))
        phi = np.zeros(len(self.h.basis))
        phi[self.h.basis.index(self.reference)] = 1.0
        psi = trotter_state(sig_int, sig_ext, n, phi, tol=1e-15)
        return float(psi @ (self.h.matrix @ psi))

    def result(self) -> FlowResult:
        return FlowResult(
            energy=self.state.energy,
            state=self.state,
            trace=self.trace,
            cycle_energies=list(self.cycle_energies),
            parameters_optimized=len(self.state.keys),
            total_spaces=self.total_spaces,
            census=self.census,
            spot_checks=self.spot_checks,
            converged=self.converged(),
            skipped=self.skipped.lines(),
            trotter_energy=self.global_energy(),
        )


@dataclass
class FlowResult:
    energy: float
    state: FlowState
    trace: FlowTrace
    cycle_energies: list[float]
    parameters_optimized: int
    total_spaces: int
    census: dict[int, int]
    spot_checks: list[dict]
    converged: bool
    skipped: list[str]
    trotter_energy: float = math.nan
    selected: list[int] | None = None
    selection_history: list[list[int]] = field(default_factory=list)


def run_qflow(config: FlowConfig, source, oracle_energy: float | None = None) -> FlowResult:
    """Hermitian QFlow: Gauss-Seidel sweeps until the main-space energy settles."""
    eng = FlowEngine(config, source, oracle_energy)
    for _ in range(config.cycles_max):
        eng.run_cycle()
        if eng.converged():
            break
    return eng.result()


def run_subflow(config: FlowConfig, source, oracle_energy: float | None = None) -> FlowResult:
    """Sub-QFlow: one full cycle, select spaces by ``|dE|``, then iterate only those.

    Amplitudes owned by excluded spaces are frozen at perturbative values
    (first-order singles/doubles, second-order triples) for the rest of
    the run.
    """
    eng = FlowEngine(config, source, oracle_energy)
    eng.run_cycle()
    selected = select_subflow(eng.trace.cycle(1), config.select_threshold, config.select_topk)
    history = [selected]
    eng.freeze_excluded(selected)
    while eng.state.cycle < config.cycles_max:
        eng.run_cycle()
        if config.reselect:
            probe = eng.probe_cycle()
            new = select_subflow(probe, config.select_threshold, config.select_topk)
            history.append(new)
            if new != selected:
                eng.unfreeze(new)
                eng.freeze_excluded(new)
                selected = new
        if eng.converged():
            break
    res = eng.result()
    res.selected = selected
    res.selection_history = history
    return res


# non-Hermitian flow ---------------------------------------------------------


@dataclass
class CCFlowResult:
    energy: float
    amplitudes: AmplitudeStore
    cycles: int
    cycle_energies: list[float]
    space_energies: dict[int, float]
    residual: float
    functional_energy: float
    total_spaces: int
    trace: FlowTrace
    converged: bool


def qflow_keys(orbitals, spaces: list[ActiveSpace]) -> list[Excitation]:
    """Union of all internal excitations (every rank) in canonical order."""
    keys = set()
    for s in spaces:
        keys.update(all_excitations(orbitals, range(1, 2 * len(s.occ) + 1), within=s.mask))
    return sorted(keys, key=lambda e: (e.rank, e.occ, e.virt))


def equivalence_residual(h: HamiltonianMatrix, t: AmplitudeStore, keys) -> tuple[float, float]:
    """``(||Q e^{-T} H e^{T} Phi||, <Phi|e^{-T} H e^{T}|Phi>)`` with ``Q`` spanning ``E_k Phi``."""
    basis = h.basis
    ref = basis.orbitals.reference()
    i0 = basis.index(ref)
    tm = t_matrix(t, basis)
    phi = np.zeros(len(basis))
    phi[i0] = 1.0
    r = exp_nilpotent(-tm, h.matrix @ exp_nilpotent(tm, phi))
    rows = []
    for e in keys:
        rr, cc, _ = e.action(basis)
        hit = rr[cc == i0]
        rows.extend(hit.tolist())
    return float(np.linalg.norm(r[rows])), float(r[i0])


def run_ccflow_nonhermitian(config: FlowConfig, source, amp_tol: float | None = None) -> CCFlowResult:
    """Coupled non-Hermitian SES eigenproblems solved by repeated sweeps.

    Each visit diagonalizes ``exp(-T_ext) H exp(T_ext)`` on the space, picks
    the root of maximal reference weight and replaces every internal
    amplitude by the cluster analysis of that eigenvector.  Converged when
    the largest amplitude change over a sweep falls below ``amp_tol``
    (default ``config.grad_tol``) and the main-space energy below
    ``config.energy_tol``.
    """
    amp_tol = config.grad_tol if amp_tol is None else amp_tol
    h = _as_hamiltonian(source)
    orbitals = h.basis.orbitals
    ref = orbitals.reference()
    n_occ, n_virt = template_picks(config.ne, config.no)
    spaces = enumerate_spaces(orbitals, n_occ, n_virt)
    ordered = [s for s, _ in importance_order(spaces, h)]
    keys = qflow_keys(orbitals, ordered)
    t = AmplitudeStore((k, 0.0) for k in keys)
    trace = FlowTrace(meta={"mode": "ccflow", "config_hash": config.hash(), "order": [s.id for s in ordered]})
    energies, space_e = [], {}
    converged = False
    cycle = 0
    for cycle in range(1, config.cycles_max + 1):
        change = 0.0
        for s in ordered:
            t_ext = t.filter(lambda e, s=s: not s.contains(e))
            heff = heff_ses_nonhermitian(h, t_ext, s)
            e_before = float(heff.matrix[0] @ _ref_internal(t, s, heff.basis))
            eig = nonsymmetric_eig(heff.matrix, reference_index=0)
            v = np.real(eig.eigenvectors[:, 0])
            e = float(np.real(eig.eigenvalues[0]))
            if not math.isfinite(e):
                raise FlowDivergence(f"space {s.id}: energy became {e}")
            t_int = cluster_analyze(StateVector(heff.basis, v), ref)
            for k in [k for k in t if s.contains(k)]:
                new = t_int.get(k, 0.0)
                change = max(change, abs(new - t[k]))
                t[k] = new
            space_e[s.id] = e
            trace.append(TraceRecord(cycle, trace.next_step(), s.id, s.occ, s.virt, e_before, e, change, 0))
        energies.append(space_e[ordered[0].id])
        de = abs(energies[-1] - energies[-2]) if len(energies) > 1 else math.inf
        if change < amp_tol and de < config.energy_tol:
            converged = True
            break
    if not converged:
        raise FlowNotConverged(f"non-Hermitian flow did not settle in {config.cycles_max} cycles")
    resid, e_func = equivalence_residual(h, t, keys)
    return CCFlowResult(
        energies[-1], t, cycle, energies, space_e, resid, e_func, len(spaces), trace, converged,
    )


def _ref_internal(t: AmplitudeStore, s: ActiveSpace, cas) -> np.ndarray:
    """``exp(T_int)|Phi>`` on the CAS basis; its projection gives the current energy."""
    phi = np.zeros(len(cas))
    phi[0] = 1.0
    return exp_nilpotent(t_matrix(t.filter(s.contains), cas), phi)


def fci_energy(source) -> float:
    h = _as_hamiltonian(source)
    e, _ = ground_state(h.matrix, h.basis.index(h.basis.orbitals.reference()))
    return e
