"""Optional trace figure; needs the ``plot`` extra (matplotlib)."""

from __future__ import annotations

from qflow.flow import FlowTrace


def plot_trace(trace: FlowTrace, path, title: str | None = None) -> str:
    """Energy after every space visit, one marker colour per cycle.

    Writes a PNG and returns its path.  Raises ``ImportError`` with an
    install hint when matplotlib is missing.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ImportError("plotting needs matplotlib: pip install 'artifact[plot]'") from exc

    fig, (ax_e, ax_d) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    cycles = sorted({r.cycle for r in trace.records})
    cmap = plt.get_cmap("viridis", max(len(cycles), 2))
    for n, c in enumerate(cycles):
        recs = trace.cycle(c)
        steps = [r.step for r in recs]
        ax_e.plot(steps, [r.e_after for r in recs], "o-", ms=3, color=cmap(n), label=f"cycle {c}")
        ax_d.semilogy(steps, [max(abs(r.delta_e), 1e-16) for r in recs], ".", color=cmap(n))
    ax_e.set_ylabel("energy after step (Hartree)")
    ax_d.set_ylabel("|dE| per step (Hartree)")
    ax_d.set_xlabel("step")
    if len(cycles) <= 10:
        ax_e.legend(fontsize="small")
    if title:
        ax_e.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)
