"""Comparison controllers: a fixed configuration and a utilisation-reactive scaler."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .domain import ConfigSpace, Configuration
from .optimizer import Action
from .sim import SimParams, capacity


class StaticController:
    """Never acts."""

    def __init__(self, config: Configuration):
        self.config = config

    def step(self, *args, **kwargs) -> Action:
        return Action.keep("static")


@dataclass(frozen=True)
class ReactivePolicy:
    target: float = 0.35
    band: float = 0.15
    step_workers: int = 4
    cooldown_s: float = 300.0
    interval_s: float = 60.0

    def __post_init__(self):
        if not 0 < self.target < 1:
            raise ValueError("target utilisation must lie in (0, 1)")


class ReactiveController:
    """Scale the worker count when utilisation leaves ``target * (1 +- band)``.

    Utilisation is the arrival rate over the current configuration's capacity.
    Only ``workers`` ever changes.
    """

    def __init__(self, policy: ReactivePolicy, space: ConfigSpace,
                 sim_params: SimParams = SimParams()):
        self.policy = policy
        self.space = space
        self.sim_params = sim_params
        self.cooldown_until = -math.inf

    def utilization(self, current: Configuration, arrival_rate: float) -> float:
        return arrival_rate / capacity(current, self.sim_params)

    def step(self, current: Configuration, arrival_rate: float, now: float = 0.0) -> Action:
        if now < self.cooldown_until:
            return Action.keep("cooldown")
        p = self.policy
        util = self.utilization(current, arrival_rate)
        w = self.space.workers
        if util > p.target * (1 + p.band):
            workers = min(current.workers + p.step_workers, w.max)
        elif util < p.target * (1 - p.band):
            workers = max(current.workers - p.step_workers, w.min)
        else:
            return Action.keep("inside band")
        if workers == current.workers:
            return Action.keep("clamped")
        return Action.reconfigure(replace(current, workers=workers), f"utilization {util:.3f}")

    def apply(self, action: Action, sim, now: float) -> bool:
        if action.config is None:
            return False
        sim.reconfigure(action.config)
        self.cooldown_until = now + self.policy.cooldown_s
        return True
