"""The periodic optimisation loop: evaluate the target job and decide an action."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .analysis import LatencyClusters, classify_latency, fit_latency_clusters
from .domain import ConfigSpace, Configuration, Hyperparams, enumerate_space, resource_scalar
from .forecast import ForecastModel, select_bin
from .mobo import CandidatePrediction, NoInformation, SegmentStore, build_ensemble, predict_candidates
from .profiler import ProfilerState


class ActionKind(str, Enum):
    KEEP = "keep"
    RECONFIGURE = "reconfigure"
    REVERT_MAX = "revert_max"


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    config: Configuration | None = None
    reason: str = ""

    @classmethod
    def keep(cls, reason: str = "") -> "Action":
        return cls(ActionKind.KEEP, None, reason)

    @classmethod
    def reconfigure(cls, config: Configuration, reason: str = "") -> "Action":
        return cls(ActionKind.RECONFIGURE, config, reason)

    @classmethod
    def revert_max(cls, c_max: Configuration, reason: str = "") -> "Action":
        return cls(ActionKind.REVERT_MAX, c_max, reason)


def select_with_buffer(feasible: Sequence[CandidatePrediction], safety_buffer: float,
                       mode: str = "index") -> CandidatePrediction:
    """Pick from feasible candidates sorted ascending by resource usage.

    ``index`` mode takes position ``ceil(SB * (n - 1))``; ``value`` mode takes
    the cheapest candidate using at least ``(1 + SB)`` times the minimum.
    """
    if not feasible:
        raise ValueError("no feasible candidates")
    ranked = sorted(feasible, key=lambda p: p.scalar)
    if mode == "index":
        return ranked[math.ceil(safety_buffer * (len(ranked) - 1) - 1e-12)]
    floor = ranked[0].scalar * (1.0 + safety_buffer)
    for p in ranked:
        if p.scalar >= floor - 1e-12:
            return p
    return ranked[-1]


def decide(current: Configuration, predictions: Sequence[CandidatePrediction],
           hyper: Hyperparams, space: ConfigSpace) -> Action:
    """Filter, buffer and threshold steps applied to model predictions."""
    feasible = [p for p in predictions if p.feasible]
    current_feasible = any(p.config == current and p.feasible for p in predictions)
    if feasible:
        chosen = select_with_buffer(feasible, hyper.safety_buffer, hyper.sb_mode)
        u_cur = resource_scalar(current, space)
        if chosen.config != current and u_cur - chosen.scalar >= hyper.efficiency_threshold * u_cur:
            return Action.reconfigure(chosen.config, "saving")
    if current_feasible:
        return Action.keep("no sufficient saving")
    if current == hyper.c_max:
        return Action.keep("at c_max")
    return Action.revert_max(hyper.c_max, "current predicted infeasible")


@dataclass
class StepRecord:
    time: float
    latency_ms: float
    transformed: float
    normal: bool
    predicted_rate: float | None
    segment: int | None
    action: Action


class Optimizer:
    def __init__(self, space: ConfigSpace, hyper: Hyperparams, store: SegmentStore,
                 forecaster: ForecastModel, profiler_state: ProfilerState | None = None,
                 n_bins: int = 5, seed: int = 0):
        self.space = space
        self.hyper = hyper
        self.store = store
        self.forecaster = forecaster
        self.profiler_state = profiler_state if profiler_state is not None else ProfilerState()
        self.n_bins = n_bins
        self.seed = seed
        self.latency_history: list[float] = []
        self.clusters: LatencyClusters | None = None
        self.cooldown_until = -math.inf
        self.history: list[StepRecord] = []
        self._configs = enumerate_space(space)

    def observe_latency(self, latency_ms: float) -> None:
        self.latency_history.append(float(latency_ms))

    def refit_clusters(self) -> LatencyClusters | None:
        lat = self.latency_history + [o.latency_avg_ms for o in self.store.all_observations()]
        if not lat:
            return None
        if len(lat) == 1:
            lat = lat * 2
        self.clusters = fit_latency_clusters(lat)
        return self.clusters

    def predicted_rate(self) -> float:
        return select_bin(self.forecaster.predict(self.hyper.forecast_horizon_s), self.n_bins)

    def step(self, current: Configuration, latency_ms: float, now: float = 0.0) -> Action:
        """One evaluation of the target job given its current windowed latency."""
        hp = self.hyper
        self.observe_latency(latency_ms)
        clusters = self.refit_clusters()
        transformed, normal = classify_latency(clusters, latency_ms)
        rate = self.predicted_rate()
        seg = self.store.segment_of(rate)

        if not normal:
            if current == hp.c_max:
                action = Action.keep("abnormal latency at c_max")
            else:
                self.profiler_state.record_revert(seg, current, now)
                action = Action.revert_max(hp.c_max, "abnormal latency")
            return self._log(now, latency_ms, transformed, normal, rate, seg, action)

        try:
            if self.store.count(seg) < hp.min_target_observations:
                raise NoInformation("too few observations in segment")
            ens = build_ensemble(self.store, seg, clusters, rng_seed=self.seed)
            preds = predict_candidates(ens, self._configs, self.space, hp.recovery_constraint)
        except NoInformation:
            if current == hp.c_max:
                action = Action.keep("no information, at c_max")
            else:
                action = Action.revert_max(hp.c_max, "no information")
            return self._log(now, latency_ms, transformed, normal, rate, seg, action)

        action = decide(current, preds, hp, self.space)
        if action.kind is ActionKind.REVERT_MAX:
            self.profiler_state.record_revert(seg, current, now)
        elif action.kind is ActionKind.RECONFIGURE and (
                resource_scalar(action.config, self.space) < resource_scalar(current, self.space)):
            self.profiler_state.record_downscale(seg, current, now)
        return self._log(now, latency_ms, transformed, normal, rate, seg, action)

    def _log(self, now, latency, transformed, normal, rate, seg, action) -> Action:
        self.history.append(StepRecord(now, latency, transformed, normal, rate, seg, action))
        return action

    def apply(self, action: Action, sim, now: float) -> bool:
        """Carry out an action on the simulator; returns whether a restart happened."""
        if action.kind is ActionKind.KEEP:
            return False
        if now < self.cooldown_until:
            return False
        sim.reconfigure(action.config)
        self.cooldown_until = now + self.hyper.optimize_interval_s
        return True
