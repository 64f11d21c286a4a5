"""``qflow`` command line: run flows, verify properties, export effective Hamiltonians.

Exit codes: 0 success, 1 bad flags or configuration, 2 unreadable or
malformed input, 3 flow divergence, 4 failed verification.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from qflow.active_space import enumerate_spaces, parse_space, template_picks
from qflow.cluster import GeneratorSet
from qflow.downfolding import (
    DownfoldingError,
    bloch_hybrid_solve,
    export_json,
    heff_bch,
    heff_perturbative,
    heff_unitary_exact,
    projection,
)
from qflow.flow import (
    ConfigError,
    FlowConfig,
    FlowDivergence,
    FlowError,
    FlowTrace,
    TraceRecord,
    importance_order,
    run_ccflow_nonhermitian,
    run_qflow,
    run_subflow,
)
from qflow.hamiltonian import build_matrix, reference_energy
from qflow.integrals import IntegralFormatError, load
from qflow.plotting import plot_trace as plot_trace_png
from qflow.verify import report, run_suites

SCHEMA_VERSION = 1
EXIT_FLAGS, EXIT_INPUT, EXIT_DIVERGED, EXIT_VERIFY = 1, 2, 3, 4

log = logging.getLogger("qflow")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_FLAGS, f"{self.prog}: error: {message}\n")


def code_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _on_off(text: str) -> bool:
    if text not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on or off")
    return text == "on"


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qflow", description="Coupled active-space flows over fermionic Hamiltonians.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a flow and write trace/summary files")
    _input_flags(r)
    r.add_argument("--config", help="flat key = value flow configuration; flags override it")
    r.add_argument("--mode", choices=["qflow", "subflow", "ccflow", "bloch"])
    r.add_argument("--ne", type=int, help="active electrons per space")
    r.add_argument("--no", type=int, help="active spatial orbitals per space")
    r.add_argument("--eta", type=float, help="gradient step size")
    r.add_argument("--cycles", type=int, dest="cycles_max", help="maximum flow cycles")
    r.add_argument("--tol", type=float, dest="energy_tol", help="main-space energy tolerance (Hartree)")
    r.add_argument("--grad-tol", type=float, dest="grad_tol")
    r.add_argument("--trotter", type=int, dest="trotter_rank", help="Trotter rank of the reported global energy")
    r.add_argument("--heff", help="exact or bch:k")
    r.add_argument("--select-threshold", type=float)
    r.add_argument("--select-topk", type=int)
    r.add_argument("--background", type=_on_off, help="on or off")
    r.add_argument("--seed", type=int)
    r.add_argument("--max-rank", type=int, help="highest excitation rank in the flow parameters")
    r.add_argument("--jacobi", action="store_const", const=True, default=None)
    r.add_argument("--reselect", action="store_const", const=True, default=None)
    r.add_argument("--order", type=int, choices=[1, 2], help="perturbative order (bloch mode)")
    r.add_argument("--space", help="active space for bloch mode, e.g. occ:[0,1],virt:[2,3]")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--plot", action="store_true", help="also render trace.png (needs matplotlib)")

    v = sub.add_parser("verify", help="run self-generating property suites")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--instances", type=int, default=3)
    v.add_argument("--property", action="append", dest="properties", help="suite name; repeatable")
    v.add_argument("--out", help="write the report here as well as to stdout")

    e = sub.add_parser("export-heff", help="write an effective Hamiltonian as synthetic JSON")
    _input_flags(e)
    e.add_argument("--space", required=True, help="occ:[..],virt:[..]")
    e.add_argument("--method", default="projection",
                   help="projection, perturbative:1, perturbative:2 or qflow (exact H^eff after a flow)")
    e.add_argument("--config", help="flow configuration for --method qflow")
    e.add_argument("--out", required=True, help="output JSON path")
    return p


def _input_flags(p):
    p.add_argument("--in", dest="input", required=True, help="Hamiltonian file")
    p.add_argument("--format", choices=["fcidump", "json"], help="default: from the suffix")


def _load(args):
    try:
        return load(args.input, args.format)
    except (OSError, IntegralFormatError, UnicodeDecodeError) as exc:
        raise _InputError(f"cannot read {args.input}: {exc}") from None


class _InputError(Exception):
    pass


def make_config(args) -> tuple[FlowConfig, str | None]:
    base = {}
    config_text = None
    if getattr(args, "config", None):
        try:
            config_text = Path(args.config).read_text()
        except OSError as exc:
            raise _InputError(f"cannot read config {args.config}: {exc}") from None
        base = {f.name: getattr(FlowConfig.from_text(config_text), f.name) for f in fields(FlowConfig)}
    for f in fields(FlowConfig):
        val = getattr(args, f.name, None)
        if val is not None:
            base[f.name] = val
    if base.get("select_threshold") is not None and getattr(args, "select_topk", None) is not None:
        base.pop("select_threshold")
    return FlowConfig(**base), config_text


@dataclass
class RunManifest:
    input: str
    format: str
    config: str | None
    out: str
    mode: str
    started: str
    finished: str
    code_version: str
    config_hash: str
    input_sha256: str

    def hash(self) -> str:
        """Timestamp-free digest shared by every artifact of a run."""
        key = json.dumps([self.input_sha256, self.format, self.config_hash, self.mode, self.code_version])
        return hashlib.sha256(key.encode()).hexdigest()[:16]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _write(path: Path, text: str):
    path.write_text(text)


def cmd_run(args) -> int:
    started = _now()
    config, _ = make_config(args)
    store = _load(args)
    fmt = args.format or ("json" if args.input.endswith(".json") else "fcidump")
    if not store.orbitals().closed_shell:
        raise ConfigError("active spaces need a closed-shell reference (MS2 = 0, even electron count)")
    h = build_matrix(store, store.orbitals().sector())
    summary: dict = {"schema_version": SCHEMA_VERSION, "mode": config.mode}
    summary["reference_energy"] = reference_energy(store)
    plot_trace = None

    if config.mode in ("qflow", "subflow"):
        runner = run_qflow if config.mode == "qflow" else run_subflow
        res = runner(config, h)
        trace = res.trace
        summary.update(
            energy=res.energy,
            cycles=len(res.cycle_energies),
            converged=res.converged,
            parameters_optimized=res.parameters_optimized,
            internal_excitations_by_rank={str(k): v for k, v in res.census.items()},
            internal_excitations_total=sum(res.census.values()),
            background_parameters=len(res.state.background_keys),
            total_spaces=res.total_spaces,
            cycle_energies=res.cycle_energies,
            trotter_rank=config.trotter_rank,
            trotter_energy=res.trotter_energy,
            main_space=_space_label(trace, 0),
            spot_checks=res.spot_checks,
            skipped_denominators=res.skipped,
        )
        if config.mode == "subflow":
            summary["selected_spaces"] = res.selected
            summary["selection_history"] = res.selection_history
        plot_trace = trace
    elif config.mode == "ccflow":
        res = run_ccflow_nonhermitian(config, h)
        trace = res.trace
        summary.update(
            energy=res.energy,
            functional_energy=res.functional_energy,
            equivalence_residual=res.residual,
            cycles=res.cycles,
            converged=res.converged,
            parameters_optimized=len(res.amplitudes),
            total_spaces=res.total_spaces,
            cycle_energies=res.cycle_energies,
        )
        plot_trace = trace
    else:
        trace, info = _run_bloch(config, h)
        summary.update(info)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(
        input=str(args.input), format=fmt, config=args.config, out=str(out), mode=config.mode,
        started=started, finished="", code_version=code_version(), config_hash=config.hash(),
        input_sha256=hashlib.sha256(Path(args.input).read_bytes()).hexdigest(),
    )
    mh = manifest.hash()
    summary["manifest_hash"] = mh
    summary["config_hash"] = config.hash()
    _write(out / "trace.csv", trace.to_csv(comment=f"manifest_hash={mh}"))
    _write(out / "trace.json", trace.to_json(manifest_hash=mh))
    _write(out / "summary.json", json.dumps(summary, indent=1, sort_keys=True) + "\n")
    _write(out / "config.txt", f"# manifest_hash={mh}\n" + config.to_text())
    if args.plot and plot_trace is not None and plot_trace.records:
        plot_trace_png(plot_trace, out / "trace.png", title=f"{config.mode} ({config.ne}e,{config.no}o)")
    manifest.finished = _now()
    _write(out / "manifest.json", json.dumps({"schema_version": SCHEMA_VERSION, "manifest_hash": mh,
                                              **manifest.__dict__}, indent=1) + "\n")
    _print_summary(summary)
    return 0


def _space_label(trace: FlowTrace, i: int) -> str | None:
    if not trace.records:
        return None
    r = trace.records[i]
    return f"occ:[{','.join(map(str, r.occ))}],virt:[{','.join(map(str, r.virt))}]"


def _run_bloch(config: FlowConfig, h):
    orbs = h.basis.orbitals
    if config.space:
        space = parse_space(config.space)
        space.validate(orbs)
    else:
        spaces = enumerate_spaces(orbs, *template_picks(config.ne, config.no))
        space = importance_order(spaces, h)[0][0]
    res = bloch_hybrid_solve(h, h.store, space, config.order)
    proj = projection(h, space)
    e_proj = float(np.linalg.eigvalsh(proj.matrix)[0])
    trace = FlowTrace(meta={"mode": "bloch", "config_hash": config.hash()})
    trace.append(TraceRecord(1, 0, space.id, space.occ, space.virt, e_proj, res.energy, 0.0, 0))
    info = dict(
        energy=res.energy, space=space.label(), order=config.order, reference_overlap=res.overlap,
        eigen_residual=res.residual, projection_energy=e_proj,
        min_denominator=res.heff.info.get("min_denominator"), skipped_denominators=res.heff.info.get("skipped"),
    )
    return trace, info


def _print_summary(summary: dict):
    for key in ("mode", "energy", "cycles", "parameters_optimized", "total_spaces", "selected_spaces",
                "equivalence_residual", "functional_energy", "manifest_hash"):
        if key in summary:
            print(f"{key}\t{json.dumps(summary[key])}")
    for n, e in enumerate(summary.get("cycle_energies", []), 1):
        print(f"cycle\t{n}\t{e!r}")


def cmd_verify(args) -> int:
    if args.instances < 1:
        raise ConfigError("--instances must be >= 1")
    try:
        checks = run_suites(args.seed, args.instances, args.properties)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    text = report(checks, args.seed, args.instances)
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0 if all(c.passed for c in checks) else EXIT_VERIFY


def cmd_export_heff(args) -> int:
    store = _load(args)
    orbs = store.orbitals()
    try:
        space = parse_space(args.space)
        space.validate(orbs)
    except ValueError as exc:
        raise _InputError(f"invalid space {args.space!r}: {exc}") from None
    h = build_matrix(store, orbs.sector())
    method = args.method
    if method == "projection":
        heff = projection(h, space)
    elif method in ("perturbative:1", "perturbative:2"):
        heff = heff_perturbative(h, store, space, int(method[-1]))
    elif method == "qflow":
        config, _ = make_config(args)
        res = run_qflow(config, h)
        heff = _flow_heff(h, res, space, config)
    else:
        raise ConfigError(f"unknown --method {method!r}")
    Path(args.out).write_text(export_json(heff))
    print(f"exported\t{space.label()}\t{heff.method}\t{args.out}")
    return 0


def _flow_heff(h, res, space, config):
    """Exact-unitary (or BCH) block for ``space`` using the finished flow amplitudes."""
    keys = res.state.keys + res.state.background_keys
    vals = np.concatenate([res.state.theta, res.state.background])
    ext = np.array([not space.contains(e) for e in keys])
    sigma = GeneratorSet(keys, h.basis).matrix(np.where(ext, vals, 0.0))
    k = config.commutator_rank()
    return heff_unitary_exact(h, sigma, space) if k is None else heff_bch(h, sigma, space, k)


def _configure_logging():
    level = os.environ.get("QFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "verify": cmd_verify, "export-heff": cmd_export_heff}
    try:
        return handlers[args.command](args)
    except _InputError as exc:
        print(f"qflow: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FlowDivergence as exc:
        print(f"qflow: flow diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, DownfoldingError) as exc:
        print(f"qflow: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except FlowError as exc:
        print(f"qflow: {exc}", file=sys.stderr)
        return EXIT_FLAGS


if __name__ == "__main__":
    sys.exit(main())
