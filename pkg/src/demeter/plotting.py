"""Figure helpers. Everything is drawn from the CSV files of a run directory."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.0,
    "savefig.dpi": 120,
}

FLAG_COLORS = {"ok": "#4c9a2a", "exceeded": "#e0a500", "timeout": "#c0392b", "NR": "#7f7f7f"}
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def size(scale=1.0, ratio=None):
    """Figure size in inches for a 6.5 in text width."""
    ratio = ratio or (math.sqrt(5.0) - 1.0) / 2.0
    w = 6.5 * scale
    return (w, w * ratio)


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _f(x):
    return float(x) if x not in ("", None) else math.nan


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def run_figures(run_dir) -> list[Path]:
    run_dir = Path(run_dir)
    written = []
    with plt.rc_context(STYLE):
        written.append(_timeline(run_dir))
        written.append(_ecdf([run_dir], ["run"], run_dir / "latency_ecdf.png"))
        written.append(_recoveries(run_dir))
    return written


def _timeline(run_dir):
    rows = [r for r in _read(run_dir / "metrics.csv") if not r["event"]]
    events = _read(run_dir / "events.csv")
    t = np.array([_f(r["t_s"]) for r in rows]) / 3600.0
    tp = np.array([_f(r["throughput"]) for r in rows])
    lat = np.array([_f(r["latency_ms"]) for r in rows])
    mem = np.array([_f(r["mem_units"]) for r in rows])
    cpu = np.array([_f(r["cpu_units"]) for r in rows])

    fig, axes = plt.subplots(3, 1, sharex=True, figsize=size(1.0, 0.9))
    axes[0].plot(t, tp / 1e3, color=PALETTE[0])
    axes[0].set_ylabel("throughput [k ev/s]")
    axes[1].semilogy(t, lat, color=PALETTE[1])
    axes[1].set_ylabel("latency [ms]")
    axes[2].plot(t, mem / mem.max() if mem.size and mem.max() > 0 else mem,
                 color=PALETTE[2], label="memory")
    axes[2].plot(t, cpu / cpu.max() if cpu.size and cpu.max() > 0 else cpu,
                 color=PALETTE[3], label="cpu", alpha=0.7)
    axes[2].set_ylabel("usage / max")
    axes[2].set_xlabel("time [h]")
    axes[2].legend(loc="upper right")
    for e in events:
        if e["event"] == "failure":
            for ax in axes:
                ax.axvline(_f(e["t_s"]) / 3600.0, color="0.6", lw=0.5, ls=":")
    path = run_dir / "timeline.png"
    _save(fig, path)
    return path


def _ecdf(run_dirs, labels, path):
    fig, ax = plt.subplots(figsize=size(0.6))
    for i, (d, label) in enumerate(zip(run_dirs, labels)):
        lat = np.sort([_f(r["latency_ms"]) for r in _read(Path(d) / "latency_windows.csv")
                       if r["latency_ms"]])
        if lat.size:
            ax.step(lat, np.arange(1, lat.size + 1) / lat.size, where="post",
                    color=PALETTE[i % len(PALETTE)], label=label)
    ax.set_xscale("log")
    ax.set_xlabel("1-minute p95 latency [ms]")
    ax.set_ylabel("ECDF")
    if len(labels) > 1:
        ax.legend(loc="lower right")
    _save(fig, path)
    return path


def _recoveries(run_dir):
    rows = _read(run_dir / "recoveries.csv")
    spec = (run_dir / "run_spec.cfg").read_text() if (run_dir / "run_spec.cfg").exists() else ""
    rc = 180.0
    for line in spec.splitlines():
        if line.startswith("hyper.recovery_constraint"):
            rc = float(line.split("=", 1)[1])
    fig, ax = plt.subplots(figsize=size(0.8, 0.45))
    idx = [int(r["failure"]) for r in rows]
    vals = [_f(r["recovery_s"]) for r in rows]
    timeout = max([v for v in vals if not math.isnan(v)] + [rc]) * 1.1
    heights = [timeout if math.isnan(v) else v for v in vals]
    colors = [FLAG_COLORS.get(r["flag"], "k") for r in rows]
    ax.bar(idx, heights, color=colors)
    ax.axhline(rc, color="k", lw=0.8, ls="--")
    ax.set_xlabel("failure #")
    ax.set_ylabel("recovery [s]")
    handles = [plt.Rectangle((0, 0), 1, 1, color=c) for c in FLAG_COLORS.values()]
    ax.legend(handles, list(FLAG_COLORS), loc="upper right", ncol=4)
    path = run_dir / "recoveries.png"
    _save(fig, path)
    return path


def comparison_figures(cmp_, run_dirs, out_dir) -> list[Path]:
    out_dir = Path(out_dir)
    written = []
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=size(0.6))
        x = np.arange(len(cmp_.labels))
        ax.bar(x - 0.2, cmp_.cpu_pct, 0.4, label="cpu", color=PALETTE[3])
        ax.bar(x + 0.2, cmp_.mem_pct, 0.4, label="memory", color=PALETTE[2])
        ax.axhline(100.0, color="k", lw=0.8, ls="--")
        ax.set_xticks(x, cmp_.labels)
        ax.set_ylabel("usage [% of reference]")
        ax.legend(loc="upper right")
        path = out_dir / "resources.png"
        _save(fig, path)
        written.append(path)

        fig, ax = plt.subplots(figsize=size(0.8, 0.45))
        for i, (label, vals) in enumerate(zip(cmp_.labels, cmp_.per_failure)):
            ax.plot(np.arange(1, len(vals) + 1), vals, marker="o", ms=3,
                    color=PALETTE[i % len(PALETTE)], label=label)
        ax.set_xlabel("failure #")
        ax.set_ylabel("recovery [s]")
        ax.legend(loc="upper right")
        path = out_dir / "recoveries.png"
        _save(fig, path)
        written.append(path)

        written.append(_ecdf(run_dirs, cmp_.labels, out_dir / "latency_ecdf.png"))
    return written
