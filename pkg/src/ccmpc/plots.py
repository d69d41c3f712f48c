"""SVG plots from trace files.

Rendering is deterministic: a fixed hash salt and no embedded creation date,
so identical traces produce byte-identical SVG files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

matplotlib.rcParams["svg.hashsalt"] = "ccmpc"

_SAVE_KWARGS = {"format": "svg", "metadata": {"Date": None}}


def _save(fig, path: Path) -> None:
    fig.savefig(path, **_SAVE_KWARGS)
    plt.close(fig)


def available_elements(columns: dict) -> list[str]:
    """Element ids that have a volume column in a trace."""
    return [name[2:] for name in columns if name.startswith("v_")]


def plot_traces(traces: list[tuple[str, dict, dict]], element_ids: list[str],
                out_dir: Path) -> list[Path]:
    """One volume plot per element, overlaying all given traces.

    ``traces`` holds (label, metadata, columns) triples from read_trace_csv.
    Unknown element ids raise ValueError listing what is available.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    valid = available_elements(traces[0][2])
    unknown = [e for e in element_ids if e not in valid]
    if unknown:
        raise ValueError(
            f"unknown element(s) {unknown}; trace contains {sorted(valid)}")

    written: list[Path] = []
    for eid in element_ids:
        fig, ax = plt.subplots(figsize=(8, 4))
        for label, meta, cols in traces:
            hours = cols["time_s"] / 3600.0
            ax.plot(hours, cols[f"v_{eid}"], label=label, linewidth=1.2)
        ax.set_xlabel("time [h]")
        ax.set_ylabel("volume [m3]")
        ax.set_title(f"tank {eid}")
        ax.grid(True, alpha=0.3)
        if len(traces) > 1:
            ax.legend(loc="best", fontsize=8)
        path = out_dir / f"volume_{eid}.svg"
        _save(fig, path)
        written.append(path)
    return written


def plot_overview(trace: tuple[str, dict, dict], out_dir: Path) -> Path:
    """Stacked overview: total weir spill flow and treatment inflow."""
    out_dir.mkdir(parents=True, exist_ok=True)
    label, meta, cols = trace
    hours = cols["time_s"] / 3600.0
    spill_cols = [c for c in cols if c.startswith("spill_")]
    pipe_cols = [c for c in cols if c.startswith("pipespill_")]

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    total_spill = sum(cols[c] for c in spill_cols + pipe_cols)
    ax1.plot(hours, total_spill, color="tab:red", linewidth=1.2)
    ax1.set_ylabel("overflow [m3/s]")
    ax1.grid(True, alpha=0.3)
    ax2.plot(hours, cols["wwtp_m3s"], color="tab:blue", linewidth=1.2)
    ax2.set_ylabel("to treatment [m3/s]")
    ax2.set_xlabel("time [h]")
    ax2.grid(True, alpha=0.3)
    fig.suptitle(f"overview: {label}")
    path = out_dir / "overview.svg"
    _save(fig, path)
    return path
