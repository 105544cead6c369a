"""Run summaries, CSV persistence and multi-run comparison."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .runner import RunResult, learning_slope

log = logging.getLogger(__name__)

METRICS_HEADER = ["t_s", "throughput", "lag", "latency_ms", "cpu_units", "mem_units",
                  "config_id", "event"]
ECDF_LEVELS = (0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)
RECOVERY_FLAGS = ("ok", "exceeded", "timeout", "NR")


class ReportError(ValueError):
    """Raised for unreadable or incompatible run directories."""


@dataclass
class RunSummary:
    name: str
    controller: str
    seed: int
    workload_signature: str
    duration_s: float
    failures: int
    recoveries_ok: int
    recoveries_exceeded: int
    recoveries_timeout: int
    recoveries_nr: int
    recovery_ok_fraction: float
    latency_windows: int
    normal_fraction: float
    latency_constraint_ms: float
    target_cpu_unit_s: float
    target_mem_unit_s: float
    profile_cpu_unit_s: float
    profile_mem_unit_s: float
    total_cpu_unit_s: float
    total_mem_unit_s: float
    reconfigurations: int
    profile_runs: int
    learning_segment: int
    learning_slope: float


def summarize(result: RunResult) -> RunSummary:
    spec = result.spec
    flags = result.recovery_flags()
    counts = {f: flags.count(f) for f in RECOVERY_FLAGS}
    measured = len(flags) - counts["NR"]
    seg, slope = learning_slope(result)
    clusters = result.clusters
    return RunSummary(
        name=spec.name or spec.controller,
        controller=spec.controller,
        seed=int(spec.seed),
        workload_signature=spec.workload_signature(),
        duration_s=spec.duration_s,
        failures=len(flags),
        recoveries_ok=counts["ok"],
        recoveries_exceeded=counts["exceeded"],
        recoveries_timeout=counts["timeout"],
        recoveries_nr=counts["NR"],
        recovery_ok_fraction=counts["ok"] / measured if measured else math.nan,
        latency_windows=len(result.measured_latencies()),
        normal_fraction=result.normal_fraction(),
        latency_constraint_ms=clusters.boundary_ms if clusters else math.nan,
        target_cpu_unit_s=result.target_cpu_s,
        target_mem_unit_s=result.target_mem_s,
        profile_cpu_unit_s=result.profile_cpu_s,
        profile_mem_unit_s=result.profile_mem_s,
        total_cpu_unit_s=result.cpu_unit_seconds,
        total_mem_unit_s=result.mem_unit_seconds,
        reconfigurations=result.reconfigurations,
        profile_runs=sum(len(r.runs) for r in result.profile_rounds),
        learning_segment=-1 if seg is None else seg,
        learning_slope=slope,
    )


def latency_ecdf(latencies: Sequence[float], levels=ECDF_LEVELS) -> list[tuple[float, float]]:
    """(probability, latency quantile) pairs; empty input gives NaN quantiles."""
    if len(latencies) == 0:
        return [(p, math.nan) for p in levels]
    q = np.quantile(np.asarray(latencies, float), levels)
    return list(zip(levels, map(float, q)))


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return format(x, ".10g")
    return str(x)


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _metrics_rows(result: RunResult):
    rows = [(s.timestamp, 0, (s.timestamp, s.input_throughput, s.consumer_lag, s.latency_ms,
                              s.cpu_units, s.mem_units, s.config_id, ""))
            for s in result.samples]
    for e in result.events:
        cid = e.config_after if e.event.startswith("profile") else f"{e.config_before}->{e.config_after}"
        rows.append((e.time, 1, (e.time, None, None, None, None, None, cid, e.event)))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [r[2] for r in rows]


def write_run(result: RunResult, out_dir, figures: bool = True) -> RunSummary:
    """Persist one run. Returns its summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summarize(result)
    rc = result.spec.hyper.recovery_constraint

    _write_csv(out / "metrics.csv", METRICS_HEADER, _metrics_rows(result))
    _write_csv(out / "events.csv",
               ["t_s", "event", "config_before", "config_after", "segment", "predicted_rate", "detail"],
               [(e.time, e.event, e.config_before, e.config_after, e.segment, e.predicted_rate, e.detail)
                for e in result.events])
    _write_csv(out / "recoveries.csv",
               ["failure", "t_s", "workload_rate", "config_id", "status", "recovery_s", "flag"],
               [(f.index, f.time, f.workload_rate, f.config_id, f.outcome.status,
                 f.outcome.seconds, f.flag(rc)) for f in result.failures])
    _write_csv(out / "latency_windows.csv", ["t_s", "latency_ms", "arrival_rate", "config_id"],
               [(w.time, w.latency_ms, w.arrival_rate, w.config.config_id) for w in result.windows])
    _write_csv(out / "summary.csv", ["key", "value"], list(asdict(summary).items()))
    (out / "run_spec.cfg").write_text(result.spec.to_text())
    (out / "summary.txt").write_text(render_summary(summary, result))
    if figures:
        from . import plotting
        plotting.run_figures(out)
    return summary


def render_summary(summary: RunSummary, result: RunResult | None = None) -> str:
    s = summary
    lines = [f"run: {s.name} (controller={s.controller}, seed={s.seed})",
             f"workload signature: {s.workload_signature}", ""]
    lines.append("latency ECDF (1-minute p95 windows)")
    lat = result.measured_latencies() if result is not None else []
    for p, q in latency_ecdf(lat):
        lines.append(f"  p{int(round(p * 100)):>2d}  {q:12.1f} ms")
    lines.append(f"  latency constraint   {s.latency_constraint_ms:.1f} ms")
    lines.append(f"  normal fraction      {s.normal_fraction:.3f} of {s.latency_windows} windows")
    lines.append("")
    lines.append("recoveries")
    if result is not None:
        rc = result.spec.hyper.recovery_constraint
        for f in result.failures:
            sec = "-" if f.outcome.seconds is None else f"{f.outcome.seconds:.0f} s"
            lines.append(f"  #{f.index:<3d} t={f.time:>8.0f}  rate={f.workload_rate:>8.0f}  "
                         f"{f.config_id:<22s} {sec:>7s}  {f.flag(rc)}")
    lines.append(f"  ok={s.recoveries_ok} exceeded={s.recoveries_exceeded} "
                 f"timeout={s.recoveries_timeout} NR={s.recoveries_nr} "
                 f"(ok fraction of measured {s.recovery_ok_fraction:.3f})")
    lines.append("")
    lines.append("resource usage (unit-seconds)")
    lines.append(f"  cpu  target {s.target_cpu_unit_s:.4g}  profiling {s.profile_cpu_unit_s:.4g}  "
                 f"total {s.total_cpu_unit_s:.4g}")
    lines.append(f"  mem  target {s.target_mem_unit_s:.4g}  profiling {s.profile_mem_unit_s:.4g}  "
                 f"total {s.total_mem_unit_s:.4g}")
    lines.append(f"reconfigurations: {s.reconfigurations}")
    lines.append(f"profile runs: {s.profile_runs}")
    lines.append(f"learning slope (segment {s.learning_segment}): {s.learning_slope:.3e} per s")
    return "\n".join(lines) + "\n"


# --- loading and comparison ------------------------------------------------

def _coerce(value: str, typ):
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def load_summary(run_dir) -> RunSummary:
    path = Path(run_dir) / "summary.csv"
    try:
        with open(path, newline="") as fh:
            data = {row["key"]: row["value"] for row in csv.DictReader(fh)}
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc
    kw = {}
    for f in fields(RunSummary):
        if f.name not in data:
            raise ReportError(f"{path}: missing key {f.name}")
        kw[f.name] = _coerce(data[f.name], f.type)
    return RunSummary(**kw)


def load_recoveries(run_dir) -> list[dict]:
    path = Path(run_dir) / "recoveries.csv"
    try:
        with open(path, newline="") as fh:
            return list(csv.DictReader(fh))
    except OSError as exc:
        raise ReportError(f"cannot read {path}: {exc}") from exc


@dataclass
class Comparison:
    labels: list[str]
    summaries: list[RunSummary]
    reference: int
    cpu_pct: list[float]
    mem_pct: list[float]
    recovery_deviation_pct: list[float]
    per_failure: list[list[float]]


def compare(run_dirs: Sequence, out_dir=None, figures: bool = True) -> Comparison:
    """Side-by-side report over at least two run directories.

    Usage is normalised to the static run (100%); without one, to the run
    with the largest memory usage. Recovery deviation is the mean relative
    difference to the reference over failures measured in both runs.
    """
    if len(run_dirs) < 2:
        raise ReportError("compare needs at least two runs")
    sums = [load_summary(d) for d in run_dirs]
    sigs = {s.workload_signature for s in sums}
    if len(sigs) != 1:
        raise ReportError("runs use different workloads or failure schedules")
    labels = _unique_labels(sums)
    statics = [i for i, s in enumerate(sums) if s.controller == "static"]
    ref = statics[0] if statics else int(np.argmax([s.total_mem_unit_s for s in sums]))
    r = sums[ref]
    cpu = [100.0 * s.total_cpu_unit_s / r.total_cpu_unit_s for s in sums]
    mem = [100.0 * s.total_mem_unit_s / r.total_mem_unit_s for s in sums]

    recs = [load_recoveries(d) for d in run_dirs]
    ref_rec = {row["failure"]: row for row in recs[ref]}
    per_failure, deviation = [], []
    for rows in recs:
        vals, devs = [], []
        for row in rows:
            sec = float(row["recovery_s"]) if row["recovery_s"] else math.nan
            vals.append(sec)
            base = ref_rec.get(row["failure"])
            if base is not None and base["recovery_s"] and row["recovery_s"]:
                b = float(base["recovery_s"])
                if b > 0:
                    devs.append(100.0 * (sec - b) / b)
        per_failure.append(vals)
        deviation.append(float(np.mean(devs)) if devs else math.nan)

    cmp_ = Comparison(labels, sums, ref, cpu, mem, deviation, per_failure)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        rows = [
            ("controller", *[s.controller for s in sums]),
            ("seed", *[s.seed for s in sums]),
            ("cpu_unit_s_pct", *cpu),
            ("mem_unit_s_pct", *mem),
            ("profile_mem_unit_s_pct", *[100.0 * s.profile_mem_unit_s / r.total_mem_unit_s for s in sums]),
            ("recovery_deviation_pct", *deviation),
            ("recovery_ok_fraction", *[s.recovery_ok_fraction for s in sums]),
            ("normal_fraction", *[s.normal_fraction for s in sums]),
            ("reconfigurations", *[s.reconfigurations for s in sums]),
        ]
        _write_csv(out / "comparison.csv", ["metric", *labels], rows)
        (out / "comparison.txt").write_text(render_comparison(cmp_))
        if figures:
            from . import plotting
            plotting.comparison_figures(cmp_, run_dirs, out)
    return cmp_


def _unique_labels(sums: list[RunSummary]) -> list[str]:
    """Run names, qualified by controller and then numbered where they clash."""
    names = [s.name for s in sums]
    names = [f"{n}/{s.controller}" if names.count(n) > 1 else n for n, s in zip(names, sums)]
    seen: dict[str, int] = {}
    out = []
    for n in names:
        k = seen.get(n, 0)
        seen[n] = k + 1
        out.append(n if k == 0 else f"{n}#{k + 1}")
    return out


def render_comparison(c: Comparison) -> str:
    width = max(12, *(len(l) + 2 for l in c.labels))
    head = "metric".ljust(26) + "".join(l.rjust(width) for l in c.labels)
    lines = [f"reference: {c.labels[c.reference]} = 100%", head, "-" * len(head)]

    def row(name, vals, fmt):
        lines.append(name.ljust(26) + "".join(fmt(v).rjust(width) for v in vals))

    row("cpu usage", c.cpu_pct, lambda v: f"{v:.1f}%")
    row("memory usage", c.mem_pct, lambda v: f"{v:.1f}%")
    row("recovery deviation", c.recovery_deviation_pct, lambda v: f"{v:+.1f}%")
    row("recoveries within RC", [s.recovery_ok_fraction for s in c.summaries], lambda v: f"{v:.3f}")
    row("normal latency fraction", [s.normal_fraction for s in c.summaries], lambda v: f"{v:.3f}")
    row("reconfigurations", [s.reconfigurations for s in c.summaries], str)
    return "\n".join(lines) + "\n"
