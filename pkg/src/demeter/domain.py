"""Decision space, observations and hyper-parameters shared by every module."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

PARAM_NAMES = ("workers", "cpu_cores", "memory_mb", "slots", "checkpoint_interval_s")


class ConfigurationError(ValueError):
    """Raised for invalid spaces, configurations or experiment settings."""


@dataclass(frozen=True, order=True)
class Configuration:
    workers: int
    cpu_cores: int
    memory_mb: int
    slots: int
    checkpoint_interval_s: int

    def as_tuple(self) -> tuple[int, ...]:
        return tuple(getattr(self, name) for name in PARAM_NAMES)

    @property
    def cpu_units(self) -> int:
        return self.workers * self.cpu_cores

    @property
    def mem_units(self) -> int:
        return self.workers * self.memory_mb

    @property
    def config_id(self) -> str:
        return (
            f"w{self.workers}-c{self.cpu_cores}-m{self.memory_mb}"
            f"-s{self.slots}-k{self.checkpoint_interval_s}"
        )

    @classmethod
    def from_id(cls, config_id: str) -> "Configuration":
        parts = config_id.split("-")
        try:
            values = [int(p[1:]) for p in parts]
        except ValueError as exc:
            raise ConfigurationError(f"bad config id {config_id!r}") from exc
        if len(values) != 5:
            raise ConfigurationError(f"bad config id {config_id!r}")
        return cls(*values)


@dataclass(frozen=True)
class ParamRange:
    min: int
    max: int
    step: int

    def validate(self, name: str) -> None:
        if self.min < 1:
            raise ConfigurationError(f"{name}: min must be >= 1, got {self.min}")
        if self.min > self.max:
            raise ConfigurationError(f"{name}: min {self.min} > max {self.max}")
        if self.step <= 0:
            raise ConfigurationError(f"{name}: step must be > 0")
        if (self.max - self.min) % self.step:
            raise ConfigurationError(f"{name}: (max - min) not divisible by step")

    def values(self) -> list[int]:
        return list(range(self.min, self.max + 1, self.step))

    def contains(self, v: int) -> bool:
        return self.min <= v <= self.max and (v - self.min) % self.step == 0


@dataclass(frozen=True)
class ConfigSpace:
    workers: ParamRange = ParamRange(4, 24, 4)
    cpu_cores: ParamRange = ParamRange(1, 3, 1)
    memory_mb: ParamRange = ParamRange(1024, 4096, 1024)
    slots: ParamRange = ParamRange(1, 4, 1)
    checkpoint_interval_s: ParamRange = ParamRange(10, 90, 10)
    max_parallelism: int = 24

    def ranges(self) -> list[ParamRange]:
        return [getattr(self, name) for name in PARAM_NAMES]

    def validate(self) -> None:
        for name, rng in zip(PARAM_NAMES, self.ranges()):
            rng.validate(name)
        if self.max_parallelism < 1:
            raise ConfigurationError("max_parallelism must be >= 1")

    def contains(self, config: Configuration) -> bool:
        return all(r.contains(v) for r, v in zip(self.ranges(), config.as_tuple()))

    def min_config(self) -> Configuration:
        return Configuration(*(r.min for r in self.ranges()))

    def max_config(self) -> Configuration:
        return Configuration(*(r.max for r in self.ranges()))


def enumerate_space(space: ConfigSpace) -> list[Configuration]:
    """All grid points of ``space`` in lexicographic order.

    The ``workers * slots <= max_parallelism`` cap is deliberately not applied
    here; the simulator caps effective parallelism instead.
    """
    space.validate()
    grids = [r.values() for r in space.ranges()]
    return [Configuration(*combo) for combo in itertools.product(*grids)]


def resource_scalar(config: Configuration, space: ConfigSpace) -> float:
    """Scalarised resource usage in (0, 1], used only for sorting and acquisition."""
    max_w = space.workers.max
    cpu = config.workers * config.cpu_cores / (max_w * space.cpu_cores.max)
    mem = config.workers * config.memory_mb / (max_w * space.memory_mb.max)
    return 0.5 * cpu + 0.5 * mem


DEFAULT_CMAX = Configuration(24, 1, 4096, 1, 10)


@dataclass(frozen=True)
class Hyperparams:
    segment_size: float = 10_000.0
    safety_buffer: float = 0.30
    efficiency_threshold: float = 0.05
    recovery_constraint: float = 180.0
    recovery_max_timeout: float = 360.0
    stabilization_s: float = 120.0
    latency_window_s: float = 60.0
    optimize_interval_s: float = 600.0
    forecast_horizon_s: float = 600.0
    profile_budget_base: int = 3
    c_max: Configuration = DEFAULT_CMAX
    # knobs below are declared defaults for behaviour left open by the method
    annealing_gamma: float = 0.8
    max_segment_observations: int = 40
    exploration_kappa: float = 0.05
    rgpe_samples: int = 256
    grace_s: float = 30.0
    sb_mode: str = "index"
    min_target_observations: int = 0

    def validate(self, space: ConfigSpace | None = None) -> None:
        if not 0.0 <= self.safety_buffer < 1.0:
            raise ConfigurationError("safety_buffer must lie in [0, 1)")
        if self.efficiency_threshold < 0:
            raise ConfigurationError("efficiency_threshold must be >= 0")
        if not 0 < self.recovery_constraint <= self.recovery_max_timeout:
            raise ConfigurationError("need 0 < recovery_constraint <= recovery_max_timeout")
        for name in ("stabilization_s", "latency_window_s", "optimize_interval_s",
                     "forecast_horizon_s", "grace_s", "segment_size"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.profile_budget_base < 1:
            raise ConfigurationError("profile_budget_base must be >= 1")
        if self.sb_mode not in ("index", "value"):
            raise ConfigurationError("sb_mode must be 'index' or 'value'")
        if space is not None and not space.contains(self.c_max):
            raise ConfigurationError(f"c_max {self.c_max.config_id} is outside the space")

    def with_(self, **changes) -> "Hyperparams":
        return replace(self, **changes)


@dataclass(frozen=True)
class Observation:
    """A profiled (or live) measurement of one configuration at one rate.

    ``recovery_s`` is ``None`` when no recovery could be measured (NR). A
    recovery that hit the timeout is stored as the timeout value itself.
    """

    config: Configuration
    workload_rate: float
    latency_avg_ms: float
    recovery_s: float | None
    timestamp: float = 0.0
    recovery_status: str = "ok"
    cpu_units: int = field(init=False)
    mem_units: int = field(init=False)

    def __post_init__(self):
        if self.latency_avg_ms <= 0:
            raise ValueError("latency_avg_ms must be > 0")
        if self.recovery_s is not None and self.recovery_s < 0:
            raise ValueError("recovery_s must be >= 0")
        object.__setattr__(self, "cpu_units", self.config.cpu_units)
        object.__setattr__(self, "mem_units", self.config.mem_units)
