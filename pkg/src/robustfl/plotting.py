"""SVG figures of simulated trajectories."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

__all__ = ["plot_outputs", "plot_inputs", "plot_states", "plot_all"]

# fixed metadata keeps the SVG bytes reproducible
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path):
    plt.rcParams["svg.hashsalt"] = "robustfl"
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return Path(path)


def _labels(trajs):
    return [t.scenario.label if t.scenario is not None else f"run{i + 1}"
            for i, t in enumerate(trajs)]


def plot_outputs(trajs, path, names=None):
    """Regulated outputs against their references, one panel per output."""
    m = trajs[0].y.shape[1]
    fig, axes = plt.subplots(m, 1, figsize=(7, 2.6 * m), sharex=True, squeeze=False)
    for i in range(m):
        ax = axes[i, 0]
        for tr, lab in zip(trajs, _labels(trajs)):
            ax.plot(tr.t, tr.y[:, i], label=lab)
        ax.plot(trajs[0].t, trajs[0].yc[:, i], "k--", lw=1, label="reference")
        ax.set_ylabel(names[i] if names else f"y{i + 1}")
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize="small")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    return _save(fig, path)


def plot_inputs(trajs, path, names=None):
    """Plant inputs ``u`` applied by the linearizing law."""
    m = trajs[0].u.shape[1]
    fig, axes = plt.subplots(m, 1, figsize=(7, 2.6 * m), sharex=True, squeeze=False)
    for i in range(m):
        ax = axes[i, 0]
        for tr, lab in zip(trajs, _labels(trajs)):
            ax.plot(tr.t, tr.u[:, i], label=lab)
        ax.set_ylabel(names[i] if names else f"u{i + 1}")
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize="small")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    return _save(fig, path)


def plot_states(trajs, path, names=None, select=None):
    """Selected plant states (all by default)."""
    n = trajs[0].x.shape[1]
    select = list(range(n)) if select is None else list(select)
    fig, axes = plt.subplots(len(select), 1, figsize=(7, 2.2 * len(select)), sharex=True,
                             squeeze=False)
    for row, i in enumerate(select):
        ax = axes[row, 0]
        for tr, lab in zip(trajs, _labels(trajs)):
            ax.plot(tr.t, tr.x[:, i], label=lab)
        ax.set_ylabel(names[i] if names else f"x{i + 1}")
        ax.grid(True, alpha=0.3)
    axes[0, 0].legend(loc="best", fontsize="small")
    axes[-1, 0].set_xlabel("t [s]")
    fig.tight_layout()
    return _save(fig, path)


def plot_all(trajs, out_dir, system=None):
    """Write ``outputs.svg``, ``inputs.svg`` and ``states.svg``; return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    onames = list(system.output_names) if system is not None else None
    inames = list(system.inputs) if system is not None else None
    snames = list(system.states) if system is not None else None
    return [plot_outputs(trajs, out_dir / "outputs.svg", onames),
            plot_inputs(trajs, out_dir / "inputs.svg", inames),
            plot_states(trajs, out_dir / "states.svg", snames)]
