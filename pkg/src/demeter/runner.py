"""Single-threaded experiment loop wiring simulator, controllers and failures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import (CalibrationError, LatencyClusters, RecoveryOutcome,
                       RecoveryTracker, calibrate, classify_latency, fit_latency_clusters)
from .baselines import ReactiveController, StaticController
from .config import ExperimentSpec
from .domain import Configuration, enumerate_space, resource_scalar
from .forecast import ForecastModel
from .mobo import SegmentStore, segment_index
from .optimizer import ActionKind, Optimizer
from .profiler import ProfilerState, ProfilingRound, profiling_round
from .sim import ClusterSim, JobState, MetricsSample, window_latency

log = logging.getLogger(__name__)


@dataclass
class FailureRecord:
    index: int
    time: float
    workload_rate: float
    config_id: str
    injected: bool
    outcome: RecoveryOutcome | None = None

    def flag(self, recovery_constraint: float) -> str:
        o = self.outcome
        if o is None or o.status == "nr":
            return "NR"
        if o.status == "timeout":
            return "timeout"
        return "ok" if o.seconds <= recovery_constraint else "exceeded"


@dataclass
class EventRecord:
    time: float
    event: str
    config_before: str
    config_after: str
    segment: int | None = None
    predicted_rate: float | None = None
    detail: str = ""


@dataclass
class LatencyWindow:
    time: float
    latency_ms: float | None
    arrival_rate: float
    config: Configuration


@dataclass
class RunResult:
    spec: ExperimentSpec
    samples: list[MetricsSample] = field(default_factory=list)
    windows: list[LatencyWindow] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)
    failures: list[FailureRecord] = field(default_factory=list)
    profile_rounds: list[ProfilingRound] = field(default_factory=list)
    target_cpu_s: float = 0.0
    target_mem_s: float = 0.0
    profile_cpu_s: float = 0.0
    profile_mem_s: float = 0.0
    reconfigurations: int = 0
    clusters: LatencyClusters | None = None
    arrivals_total: float = 0.0
    processed_total: float = 0.0
    final_lag: float = 0.0
    store: SegmentStore | None = None

    @property
    def cpu_unit_seconds(self) -> float:
        return self.target_cpu_s + self.profile_cpu_s

    @property
    def mem_unit_seconds(self) -> float:
        return self.target_mem_s + self.profile_mem_s

    def measured_latencies(self) -> list[float]:
        return [w.latency_ms for w in self.windows if w.latency_ms is not None]

    def normal_fraction(self) -> float:
        lat = self.measured_latencies()
        if not lat or self.clusters is None:
            return float("nan")
        return float(np.mean([classify_latency(self.clusters, l)[1] for l in lat]))

    def recovery_flags(self) -> list[str]:
        rc = self.spec.hyper.recovery_constraint
        return [f.flag(rc) for f in self.failures]


def _calibration_window(history: list[MetricsSample], n: int = 30) -> list[MetricsSample]:
    running = [s for s in history if s.state is JobState.RUNNING]
    return running[-n:] if len(running) >= n else history[-n:]


def run(spec: ExperimentSpec) -> RunResult:
    """Simulate one experiment; deterministic given ``spec.seed``."""
    spec.validate()
    hp, space, params = spec.hyper, spec.space, spec.sim
    tick = params.tick_s
    seed = int(spec.seed)
    result = RunResult(spec)
    workload = spec.resolved_workload

    target = ClusterSim(spec.initial_config, params, seed=[seed, 0])
    fc = spec.forecast
    forecaster = ForecastModel(fc.p, fc.d, fc.window_len, interval_s=tick)
    store = SegmentStore(space, hp, gp_restarts=spec.profiler.gp_restarts)
    result.store = store
    pstate = ProfilerState()
    optimizer = None
    controller = None
    if spec.controller == "demeter":
        optimizer = Optimizer(space, hp, store, forecaster, pstate, n_bins=fc.n_bins, seed=seed)
    elif spec.controller == "static":
        controller = StaticController(target.config)
    else:
        controller = ReactiveController(spec.reactive, space, params)

    all_configs = enumerate_space(space) if optimizer is not None else None
    n_ticks = int(round(spec.duration_s / tick))
    window_ticks = int(round(hp.latency_window_s / tick))
    failure_times = [spec.failure_interval_s * (k + 1) for k in range(spec.failure_count)]
    failure_times = [t for t in failure_times if t <= spec.duration_s]
    next_failure = 0
    trackers: list[tuple[FailureRecord, RecoveryTracker]] = []
    next_opt = hp.optimize_interval_s
    next_profile = hp.optimize_interval_s / 2
    next_reactive = spec.reactive.interval_s
    pending_round: ProfilingRound | None = None
    running_since = 0.0
    profile_counter = 0
    history = result.samples

    def event(t, name, before, after, seg=None, rate=None, detail=""):
        result.events.append(EventRecord(t, name, before, after, seg, rate, detail))

    for i in range(n_ticks):
        t0 = i * tick
        lam = workload.rate(t0)

        was_down = target.state is JobState.RESTARTING
        sample = target.step(tick, lam)
        history.append(sample)
        now = sample.timestamp
        up = target.state is not JobState.RESTARTING
        if up and was_down:
            running_since = now
        result.target_cpu_s += sample.cpu_units * tick
        result.target_mem_s += sample.mem_units * tick
        forecaster.update(lam)

        for rec, tr in trackers:
            tr.push(now, sample.input_throughput, sample.consumer_lag)
            if tr.done:
                rec.outcome = tr.outcome
        trackers = [(r, tr) for r, tr in trackers if not tr.done]

        # failures due at this instant land before any controller acts on it
        while next_failure < len(failure_times) and failure_times[next_failure] <= now:
            ft = failure_times[next_failure]
            rec = FailureRecord(next_failure + 1, ft, lam, target.config.config_id, False)
            result.failures.append(rec)
            window = _calibration_window(history)
            try:
                detector = calibrate(window)
            except CalibrationError:
                detector = None
            rec.injected = target.inject_failure()
            event(ft, "failure", rec.config_id, rec.config_id,
                  detail="injected" if rec.injected else "ignored")
            if rec.injected and detector is not None:
                trackers.append((rec, RecoveryTracker(detector, ft, hp.grace_s,
                                                      hp.recovery_max_timeout)))
            else:
                rec.outcome = RecoveryOutcome("nr")
            next_failure += 1

        up = target.state is not JobState.RESTARTING

        if (i + 1) % window_ticks == 0:
            win = history[-window_ticks:]
            lat = window_latency(win)
            result.windows.append(LatencyWindow(now, lat, float(np.mean([s.arrival_rate for s in win])),
                                                target.config))
            if optimizer is not None and lat is not None:
                optimizer.observe_latency(lat)

        if pending_round is not None and pending_round.end <= now:
            for run_ in pending_round.runs:
                store.add(run_.observation)
                event(run_.end, "profile_end", run_.observation.config.config_id,
                      run_.observation.config.config_id, pending_round.segment,
                      pending_round.predicted_rate,
                      f"lat={run_.observation.latency_avg_ms:.0f}ms "
                      f"rec={run_.observation.recovery_status}:{run_.observation.recovery_s}")
            pending_round = None

        if optimizer is not None:
            if now >= next_profile:
                next_profile += hp.optimize_interval_s
                if pending_round is None and not forecaster.cold:
                    clusters = optimizer.refit_clusters()
                    rate = optimizer.predicted_rate()
                    profile_counter += 1
                    rnd = profiling_round(
                        rate, store, pstate, clusters, workload, params, now, space, hp,
                        seed=[seed, profile_counter], tick_s=spec.profiler.tick_s,
                        max_parallel=spec.profiler.max_parallel or None, apply=False,
                        all_configs=all_configs)
                    result.profile_rounds.append(rnd)
                    if rnd.runs:
                        pending_round = rnd
                        for run_ in rnd.runs:
                            result.profile_cpu_s += run_.cpu_unit_seconds
                            result.profile_mem_s += run_.mem_unit_seconds
                            event(now, "profile_start", target.config.config_id,
                                  run_.observation.config.config_id, rnd.segment, rate)
            if now >= next_opt:
                next_opt += hp.optimize_interval_s
                fresh = (up and now - running_since >= hp.latency_window_s
                         and now >= optimizer.cooldown_until)
                lat = window_latency(history[-window_ticks:]) if fresh else None
                if lat is not None:
                    before = target.config
                    action = optimizer.step(before, lat, now)
                    rec = optimizer.history[-1]
                    if optimizer.apply(action, target, now):
                        result.reconfigurations += 1
                    event(now, action.kind.value, before.config_id, target.config.config_id,
                          rec.segment, rec.predicted_rate, action.reason)
        elif isinstance(controller, ReactiveController):
            if now >= next_reactive:
                next_reactive += spec.reactive.interval_s
                if up and now - running_since >= hp.latency_window_s:
                    win = history[-window_ticks:]
                    rate = float(np.mean([s.arrival_rate for s in win]))
                    action = controller.step(target.config, rate, now)
                    if action.kind is not ActionKind.KEEP:
                        before = target.config
                        controller.apply(action, target, now)
                        result.reconfigurations += 1
                        event(now, "reconfigure", before.config_id, target.config.config_id,
                              detail=action.reason)

    for rec, tr in trackers:
        rec.outcome = tr.finish()
    for rec in result.failures:
        if rec.outcome is None:
            rec.outcome = RecoveryOutcome("nr")

    result.arrivals_total = target.arrivals_total
    result.processed_total = target.processed_total
    result.final_lag = target.lag
    if optimizer is not None:
        result.clusters = optimizer.refit_clusters()
    else:
        lat = result.measured_latencies()
        if len(lat) >= 2:
            result.clusters = fit_latency_clusters(lat)
    return result


def learning_slope(result: RunResult) -> tuple[int | None, float]:
    """Slope over time of the chosen configurations' resource scalar in the
    most-populated workload segment (by number of latency windows)."""
    ss = result.spec.hyper.segment_size
    segs = [segment_index(w.arrival_rate, ss) for w in result.windows]
    if not segs:
        return None, 0.0
    counts = np.bincount(segs)
    top = int(np.argmax(counts))
    pts = [(w.time, resource_scalar(w.config, result.spec.space))
           for w, s in zip(result.windows, segs) if s == top]
    if len(pts) < 2:
        return top, 0.0
    t, u = np.array(pts).T
    if np.ptp(t) == 0:
        return top, 0.0
    slope = float(np.polyfit(t, u, 1)[0])
    return top, slope if math.isfinite(slope) else 0.0
