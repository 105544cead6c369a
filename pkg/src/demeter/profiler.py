"""Profiling: budget annealing, domain-knowledge pruning and parallel profile runs."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .analysis import LatencyClusters, RecoveryTracker, calibrate
from .domain import ConfigSpace, Configuration, Hyperparams, Observation, enumerate_space, resource_scalar
from .mobo import NoInformation, SegmentStore, acquisition, build_ensemble
from .sim import ClusterSim, ProfileBudgetError, SimParams, WorkloadSource, spawn_profile_jobs, window_latency

log = logging.getLogger(__name__)


def annealed_budget(r: int, base: int, gamma: float = 0.8, n_obs: int = 0,
                    max_obs: int = 40) -> int:
    """Number of profiles for a segment after ``r`` completed rounds.

    ``ceil(base * gamma**r)`` never drops below 1; a segment holding
    ``max_obs`` observations is no longer profiled.
    """
    if base < 1:
        raise ValueError("base must be >= 1")
    if n_obs >= max_obs:
        return 0
    return math.ceil(base * gamma ** r - 1e-12)


@dataclass(frozen=True)
class DomainEvent:
    kind: str            # "revert" | "downscale"
    config: Configuration
    timestamp: float


@dataclass
class ProfilerState:
    rounds: dict[int, int] = field(default_factory=dict)
    events: dict[int, DomainEvent] = field(default_factory=dict)

    def record_revert(self, segment: int, config: Configuration, t: float) -> None:
        self.events[segment] = DomainEvent("revert", config, t)

    def record_downscale(self, segment: int, config: Configuration, t: float) -> None:
        self.events[segment] = DomainEvent("downscale", config, t)


def domain_prune(candidates: Sequence[Configuration], state: ProfilerState, segment: int,
                 space: ConfigSpace) -> list[Configuration]:
    """Filter candidates by the segment's most recent revert or downscale.

    After a revert from ``c`` only configurations with more resources than
    ``c`` survive; after a downscale from ``c`` only those with fewer. An
    empty result falls back to the unfiltered list.
    """
    event = state.events.get(segment)
    if event is None:
        return list(candidates)
    ref = resource_scalar(event.config, space)
    if event.kind == "revert":
        kept = [c for c in candidates if resource_scalar(c, space) > ref]
    else:
        kept = [c for c in candidates if resource_scalar(c, space) < ref]
    return kept if kept else list(candidates)


@dataclass(frozen=True)
class ProfileRun:
    observation: Observation
    start: float
    end: float

    @property
    def cpu_unit_seconds(self) -> float:
        return self.observation.cpu_units * (self.end - self.start)

    @property
    def mem_unit_seconds(self) -> float:
        return self.observation.mem_units * (self.end - self.start)


def run_profile(sim: ClusterSim, workload: WorkloadSource, hyper: Hyperparams,
                tick_s: float = 2.0) -> ProfileRun:
    """Stabilise, measure latency, inject a timeout failure, measure recovery."""
    start = sim.clock

    def advance():
        return sim.step(tick_s, workload.rate(sim.clock))

    for _ in range(int(round(hyper.stabilization_s / tick_s))):
        advance()
    window = [advance() for _ in range(int(round(hyper.latency_window_s / tick_s)))]
    latency = window_latency(window)
    rate = float(np.mean([s.arrival_rate for s in window]))
    detector = calibrate(window)
    failure_time = sim.clock
    sim.inject_failure()
    tracker = RecoveryTracker(detector, failure_time, hyper.grace_s, hyper.recovery_max_timeout)
    deadline = failure_time + hyper.recovery_max_timeout + hyper.grace_s + tick_s
    while not tracker.done and sim.clock < deadline:
        s = advance()
        tracker.push(s.timestamp, s.input_throughput, s.consumer_lag)
    outcome = tracker.finish()
    if outcome.status == "ok":
        recovery = outcome.seconds
    elif outcome.status == "timeout":
        recovery = hyper.recovery_max_timeout
    else:
        recovery = None
    if latency is None:
        latency = sim.params.base_ms
    obs = Observation(sim.config, rate, latency, recovery, timestamp=sim.clock,
                      recovery_status=outcome.status)
    return ProfileRun(obs, start, sim.clock)


@dataclass
class ProfilingRound:
    segment: int
    predicted_rate: float
    budget: int
    runs: list[ProfileRun] = field(default_factory=list)
    skipped: str | None = None

    @property
    def observations(self) -> list[Observation]:
        return [r.observation for r in self.runs]

    @property
    def end(self) -> float:
        return max((r.end for r in self.runs), default=0.0)


def best_feasible_u(store: SegmentStore, segment: int, clusters: LatencyClusters,
                    space: ConfigSpace, hyper: Hyperparams) -> float:
    best = resource_scalar(hyper.c_max, space)
    for o in store.observations(segment):
        rec = hyper.recovery_max_timeout if o.recovery_s is None else o.recovery_s
        if clusters.transform(o.latency_avg_ms) < 0.5 and rec <= hyper.recovery_constraint:
            best = min(best, resource_scalar(o.config, space))
    return best


def _spread(candidates: list[Configuration], k: int, space: ConfigSpace) -> list[Configuration]:
    ranked = sorted(candidates, key=lambda c: resource_scalar(c, space))
    n = len(ranked)
    picks, seen = [], set()
    for j in range(k):
        idx = int(round((j + 1) / (k + 1) * (n - 1)))
        if idx not in seen:
            seen.add(idx)
            picks.append(ranked[idx])
    return picks


def select_profiles(store: SegmentStore, state: ProfilerState, segment: int,
                    clusters: LatencyClusters | None, space: ConfigSpace, hyper: Hyperparams,
                    budget: int, seed=0, all_configs: Sequence[Configuration] | None = None):
    profiled = store.profiled_configs(segment)
    configs = all_configs if all_configs is not None else enumerate_space(space)
    candidates = [c for c in configs if c not in profiled]
    if not candidates:
        return []
    candidates = domain_prune(candidates, state, segment, space)
    if clusters is not None:
        try:
            ens = build_ensemble(store, segment, clusters, rng_seed=seed)
        except NoInformation:
            ens = None
        if ens is not None:
            best_u = best_feasible_u(store, segment, clusters, space, hyper)
            scored = acquisition(ens, candidates, space, hyper.recovery_constraint, best_u,
                                 hyper.exploration_kappa)
            return [s.config for s in scored[:budget]]
    return _spread(candidates, budget, space)


def profiling_round(predicted_rate: float, store: SegmentStore, state: ProfilerState,
                    clusters: LatencyClusters | None, workload: WorkloadSource,
                    sim_params: SimParams, clock: float, space: ConfigSpace,
                    hyper: Hyperparams, seed=0, tick_s: float = 2.0,
                    max_parallel: int | None = None, apply: bool = True,
                    all_configs: Sequence[Configuration] | None = None) -> ProfilingRound:
    """One iteration of the profiling loop at ``predicted_rate``.

    With ``apply`` the resulting observations are added to ``store``
    immediately; otherwise the caller adds them when the round completes.
    """
    segment = store.segment_of(predicted_rate)
    r = state.rounds.get(segment, 0)
    budget = annealed_budget(r, hyper.profile_budget_base, hyper.annealing_gamma,
                             store.count(segment), hyper.max_segment_observations)
    rnd = ProfilingRound(segment, predicted_rate, budget)
    if budget == 0:
        rnd.skipped = "budget"
        return rnd
    chosen = select_profiles(store, state, segment, clusters, space, hyper, budget,
                             seed=seed, all_configs=all_configs)
    if not chosen:
        rnd.skipped = "exhausted"
        return rnd
    try:
        sims = spawn_profile_jobs(chosen, sim_params, clock, seed, budget=max_parallel)
    except ProfileBudgetError as exc:
        log.warning("profiling round aborted: %s", exc)
        rnd.skipped = "spawn"
        return rnd
    state.rounds[segment] = r + 1
    for sim in sims:
        rnd.runs.append(run_profile(sim, workload, hyper, tick_s))
    if apply:
        for obs in rnd.observations:
            store.add(obs)
    return rnd
