"""Deterministic fluid simulator of a stream-processing job on a cluster.

The job consumes a message queue at rate ``capacity(config)``. Failures and
reconfigurations stop processing for a downtime, roll the committed offset
back to the last checkpoint and then drain the accumulated backlog.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .domain import Configuration

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimParams:
    """Capacity-model and restart constants (calibration knobs)."""

    rho_slot: float = 3000.0        # events/s per fully provisioned slot
    h_ckpt_s: float = 1.5           # seconds of lost work per checkpoint
    m_half_mb: float = 512.0        # memory per slot giving half the benefit
    cpu_exponent: float = 0.7
    max_parallelism: int = 24
    base_ms: float = 500.0
    service_s: float = 0.25
    rho_cap: float = 0.98
    detection_s: float = 20.0
    restart_s: float = 40.0
    latency_noise: float = 0.05
    tick_s: float = 10.0


def capacity(config: Configuration, params: SimParams = SimParams()) -> float:
    """Sustainable processing rate in events/s."""
    p_eff = min(config.workers * config.slots, params.max_parallelism)
    f_cpu = min(1.0, config.cpu_cores / config.slots) ** params.cpu_exponent
    mem = config.memory_mb / config.slots
    g_mem = mem / (mem + params.m_half_mb)
    ckpt = max(0.0, 1.0 - params.h_ckpt_s / config.checkpoint_interval_s)
    return params.rho_slot * p_eff * f_cpu * g_mem * ckpt


# --- workload -------------------------------------------------------------

_NOISE_BLOCK = 4096


@lru_cache(maxsize=256)
def _noise_block(seed: int, block: int) -> np.ndarray:
    return np.random.default_rng([seed, block]).standard_normal(_NOISE_BLOCK)


@dataclass(frozen=True)
class WorkloadSource:
    """Arrival-rate generator shared by the target job and its profiles.

    ``rate(t)`` is a pure function of ``t``; noise is multiplicative
    Gaussian on a fixed grid, linearly interpolated between grid points.
    """

    mode: str = "sinusoid"          # sinusoid | steps | trace
    base: float = 32_500.0
    amplitude: float = 27_500.0
    period_s: float = 21_600.0
    phase: float = -math.pi / 2
    levels: tuple[float, ...] = (10_000.0, 30_000.0, 50_000.0, 30_000.0)
    step_s: float = 3600.0
    noise: float = 0.0
    noise_interval_s: float = 10.0
    seed: int | None = None          # None: the experiment seed is used
    trace_t: tuple[float, ...] = ()
    trace_rate: tuple[float, ...] = ()

    def __post_init__(self):
        if self.mode not in ("sinusoid", "steps", "trace"):
            raise ValueError(f"unknown workload mode {self.mode!r}")
        if self.mode == "trace":
            if len(self.trace_t) < 1 or len(self.trace_t) != len(self.trace_rate):
                raise ValueError("trace needs matching, non-empty timestamp/rate columns")
            if any(b < a for a, b in zip(self.trace_t, self.trace_t[1:])):
                raise ValueError("trace timestamps must be monotone")
            if any(r < 0 for r in self.trace_rate):
                raise ValueError("trace rates must be >= 0")

    @classmethod
    def from_trace(cls, path, **kwargs) -> "WorkloadSource":
        ts, rates = read_trace(path)
        return cls(mode="trace", trace_t=tuple(ts), trace_rate=tuple(rates), **kwargs)

    def _clean(self, t: float) -> float:
        if self.mode == "sinusoid":
            return self.base + self.amplitude * math.sin(2 * math.pi * t / self.period_s + self.phase)
        if self.mode == "steps":
            return self.levels[int(t // self.step_s) % len(self.levels)]
        return float(np.interp(t, self.trace_t, self.trace_rate))

    def _noise(self, t: float) -> float:
        x = t / self.noise_interval_s
        k = math.floor(x)
        frac = x - k
        seed = self.seed or 0
        z0 = _noise_block(seed, k // _NOISE_BLOCK)[k % _NOISE_BLOCK]
        k1 = k + 1
        z1 = _noise_block(seed, k1 // _NOISE_BLOCK)[k1 % _NOISE_BLOCK]
        return (1 - frac) * z0 + frac * z1

    def rate(self, t: float) -> float:
        r = self._clean(t)
        if self.noise > 0:
            r *= 1.0 + self.noise * self._noise(t)
        return max(r, 0.0)


def read_trace(path) -> tuple[list[float], list[float]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["timestamp_s", "rate_events_per_s"]:
            raise ValueError(f"{path}: expected header timestamp_s,rate_events_per_s")
        rows = [(float(r["timestamp_s"]), float(r["rate_events_per_s"])) for r in reader]
    if not rows:
        raise ValueError(f"{path}: empty trace")
    return [r[0] for r in rows], [r[1] for r in rows]


def write_trace(path, source: WorkloadSource, duration_s: float, interval_s: float = 10.0) -> None:
    n = int(duration_s // interval_s) + 1
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["timestamp_s", "rate_events_per_s"])
        for i in range(n):
            t = i * interval_s
            w.writerow([f"{t:g}", f"{source.rate(t):.3f}"])


# --- job ------------------------------------------------------------------

class JobState(str, Enum):
    RUNNING = "running"
    RESTARTING = "restarting"
    CATCHING_UP = "catching_up"


class SimStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricsSample:
    timestamp: float
    input_throughput: float
    consumer_lag: float
    latency_ms: float | None   # None while no output is produced
    cpu_units: int
    mem_units: int
    arrival_rate: float
    state: JobState
    config_id: str


class ClusterSim:
    def __init__(self, config: Configuration, params: SimParams = SimParams(), seed=0,
                 clock: float = 0.0):
        self.config = config
        self.params = params
        self.clock = float(clock)
        self.lag = 0.0
        self.arrivals_total = 0.0
        self.processed_total = 0.0
        self.state = JobState.RUNNING
        self.restart_remaining = 0.0
        self.rng = np.random.default_rng(seed)
        self.last_throughput = 0.0
        self.restarts = 0
        self.ignored_failures = 0

    @property
    def capacity(self) -> float:
        return capacity(self.config, self.params)

    def state_hash(self) -> int:
        return hash((self.config, self.clock, self.lag, self.arrivals_total,
                     self.processed_total, self.state, self.restart_remaining))

    def step(self, dt_s: float, arrival_rate: float) -> MetricsSample:
        if dt_s <= 0:
            raise ValueError("dt_s must be > 0")
        lam = max(float(arrival_rate), 0.0)
        mu = self.capacity
        down = 0.0
        if self.state is JobState.RESTARTING:
            down = min(self.restart_remaining, dt_s)
            self.restart_remaining -= down
        up = dt_s - down
        arrivals = lam * dt_s
        available = self.lag + arrivals
        processed = min(available, mu * up)
        self.lag = available - processed
        self.arrivals_total += arrivals
        self.processed_total += processed
        self.clock += dt_s
        throughput = processed / dt_s
        if processed > 0:
            self.last_throughput = throughput

        if self.state is JobState.RESTARTING and self.restart_remaining <= 1e-9:
            self.restart_remaining = 0.0
            self.state = JobState.CATCHING_UP
        if self.state is JobState.CATCHING_UP and self.lag <= lam * 1.0:
            self.state = JobState.RUNNING

        noise = self.rng.uniform(1 - self.params.latency_noise, 1 + self.params.latency_noise)
        latency = None
        if up > 0 and mu > 0:
            rho = min(lam / mu, self.params.rho_cap)
            latency = self.params.base_ms + 1000.0 * (
                self.params.service_s / (1.0 - rho) + self.lag / mu)
            latency *= noise
        return MetricsSample(self.clock, throughput, self.lag, latency, self.config.cpu_units,
                             self.config.mem_units, lam, self.state, self.config.config_id)

    def _restart(self, downtime: float) -> None:
        interval = self.config.checkpoint_interval_s
        since_ckpt = self.rng.uniform(0.0, interval)
        rollback = min(since_ckpt * self.last_throughput, self.processed_total)
        self.processed_total -= rollback
        self.lag += rollback
        self.state = JobState.RESTARTING
        self.restart_remaining = downtime
        self.restarts += 1

    def inject_failure(self) -> bool:
        """Timeout failure; ignored (returns False) while already restarting."""
        if self.state is JobState.RESTARTING:
            self.ignored_failures += 1
            log.info("failure at t=%.0f ignored: job already restarting", self.clock)
            return False
        self._restart(self.params.detection_s + self.params.restart_s)
        return True

    def reconfigure(self, new: Configuration) -> None:
        if self.state is JobState.RESTARTING:
            raise SimStateError("cannot reconfigure while restarting")
        self._restart(self.params.restart_s)
        self.config = new


class ProfileBudgetError(RuntimeError):
    pass


def spawn_profile_jobs(configs: Sequence[Configuration], params: SimParams, clock: float,
                       seed, budget: int | None = None) -> list[ClusterSim]:
    """Independent simulators for profiling runs; each gets its own seed."""
    if budget is not None and len(configs) > budget:
        raise ProfileBudgetError(f"{len(configs)} profiles exceed budget {budget}")
    base = np.atleast_1d(seed).tolist()
    return [ClusterSim(c, params, seed=[*base, i], clock=clock)
            for i, c in enumerate(configs)]


def window_latency(samples: Sequence[MetricsSample]) -> float | None:
    """95th percentile of the per-tick latencies in a window."""
    lat = [s.latency_ms for s in samples if s.latency_ms is not None]
    if not lat:
        return None
    return float(np.percentile(lat, 95))
