"""Experiment specification and its flat ``section.key = value`` file format.

Example::

    controller = demeter
    duration_s = 64800
    workload.mode = sinusoid
    workload.noise = 0.05
    failures.interval_s = 2700
    hyper.SS = 10000
    space.workers = 4, 24, 4
    cmax.workers = 24
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .baselines import ReactivePolicy
from .domain import PARAM_NAMES, ConfigSpace, Configuration, ConfigurationError, Hyperparams, ParamRange
from .sim import SimParams, WorkloadSource, read_trace

CONTROLLERS = ("demeter", "static", "reactive")

HYPER_ALIASES = {
    "SS": "segment_size",
    "SB": "safety_buffer",
    "ET": "efficiency_threshold",
    "RC": "recovery_constraint",
}


@dataclass(frozen=True)
class ForecastSettings:
    p: int = 3
    d: int = 1
    window_len: int = 120
    n_bins: int = 5


@dataclass(frozen=True)
class ProfilerSettings:
    tick_s: float = 2.0
    max_parallel: int = 0          # 0 means no cap beyond the round budget
    gp_restarts: int = 8


@dataclass(frozen=True)
class ExperimentSpec:
    controller: str = "demeter"
    workload: WorkloadSource = field(default_factory=WorkloadSource)
    hyper: Hyperparams = field(default_factory=Hyperparams)
    space: ConfigSpace = field(default_factory=ConfigSpace)
    sim: SimParams = field(default_factory=SimParams)
    forecast: ForecastSettings = field(default_factory=ForecastSettings)
    profiler: ProfilerSettings = field(default_factory=ProfilerSettings)
    reactive: ReactivePolicy = field(default_factory=ReactivePolicy)
    static_config: Configuration | None = None
    duration_s: float = 64_800.0
    failure_interval_s: float = 2_700.0
    failure_count: int = 23
    seed: int | None = None
    name: str = ""

    def validate(self) -> None:
        if self.controller not in CONTROLLERS:
            raise ConfigurationError(f"controller must be one of {CONTROLLERS}")
        self.space.validate()
        self.hyper.validate(self.space)
        if self.seed is None:
            raise ConfigurationError("an explicit seed is required")
        if self.duration_s <= 0:
            raise ConfigurationError("duration_s must be > 0")
        if self.failure_count < 0 or self.failure_interval_s <= 0:
            raise ConfigurationError("failure schedule must have count >= 0, interval > 0")
        if self.duration_s < self.failure_interval_s * self.failure_count:
            raise ConfigurationError("duration_s must cover failure interval * count")
        if self.static_config is not None and not self.space.contains(self.static_config):
            raise ConfigurationError("static configuration is outside the space")
        if self.hyper.latency_window_s % self.sim.tick_s:
            raise ConfigurationError("latency window must be a multiple of the tick")
        if self.hyper.latency_window_s % self.profiler.tick_s:
            raise ConfigurationError("latency window must be a multiple of the profile tick")

    @property
    def resolved_workload(self) -> WorkloadSource:
        """The workload with an unset noise seed replaced by the run seed."""
        if self.workload.seed is None and self.seed is not None:
            return replace(self.workload, seed=int(self.seed))
        return self.workload

    @property
    def initial_config(self) -> Configuration:
        if self.controller == "static" and self.static_config is not None:
            return self.static_config
        return self.hyper.c_max

    def workload_signature(self) -> str:
        text = "|".join([repr(self.resolved_workload), f"{self.duration_s:g}",
                         f"{self.failure_interval_s:g}", str(self.failure_count)])
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_text(self) -> str:
        lines = [f"controller = {self.controller}", f"name = {self.name}",
                 f"duration_s = {self.duration_s:g}", f"seed = {self.seed}",
                 f"failures.interval_s = {self.failure_interval_s:g}",
                 f"failures.count = {self.failure_count}"]
        for f in fields(WorkloadSource):
            v = getattr(self.resolved_workload, f.name)
            if f.name in ("trace_t", "trace_rate"):
                continue
            lines.append(f"workload.{f.name} = {_fmt(v)}")
        if self.workload.mode == "trace":
            lines.append(f"# trace rows = {len(self.workload.trace_t)}")
        for f in fields(Hyperparams):
            if f.name != "c_max":
                lines.append(f"hyper.{f.name} = {_fmt(getattr(self.hyper, f.name))}")
        for name in PARAM_NAMES:
            r = getattr(self.space, name)
            lines.append(f"space.{name} = {r.min}, {r.max}, {r.step}")
            lines.append(f"cmax.{name} = {getattr(self.hyper.c_max, name)}")
        lines.append(f"space.max_parallelism = {self.space.max_parallelism}")
        if self.static_config is not None:
            for name in PARAM_NAMES:
                lines.append(f"static.{name} = {getattr(self.static_config, name)}")
        for prefix, obj in (("sim", self.sim), ("forecast", self.forecast),
                            ("profiler", self.profiler), ("reactive", self.reactive)):
            for f in fields(obj):
                lines.append(f"{prefix}.{f.name} = {_fmt(getattr(obj, f.name))}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _convert(raw: str, default, key: str):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int) or (default is None and key.endswith(".seed")):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(x) for x in raw.split(",") if x.strip())
        return raw
    except ValueError as exc:
        raise ConfigurationError(f"{key}: cannot parse {raw!r}") from exc


def _update(obj, section: str, values: dict[str, str], aliases=None):
    names = {f.name for f in fields(obj)}
    changes = {}
    for key, raw in values.items():
        name = (aliases or {}).get(key, key)
        if name not in names:
            raise ConfigurationError(f"unknown key {section}.{key}")
        changes[name] = _convert(raw, getattr(obj, name), f"{section}.{key}")
    try:
        return replace(obj, **changes) if changes else obj
    except ValueError as exc:
        raise ConfigurationError(f"{section}: {exc}") from exc


def _config_from(values: dict[str, str], base: Configuration, section: str) -> Configuration:
    kw = dict(zip(PARAM_NAMES, base.as_tuple()))
    for key, raw in values.items():
        if key not in kw:
            raise ConfigurationError(f"unknown key {section}.{key}")
        kw[key] = _convert(raw, 0, f"{section}.{key}")
    return Configuration(**kw)


def parse_spec_text(text: str, base_dir: Path | None = None) -> ExperimentSpec:
    sections: dict[str, dict[str, str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        section, _, name = key.rpartition(".")
        sections.setdefault(section, {})[name] = raw

    spec = ExperimentSpec()
    top = sections.pop("", {})
    kw = {}
    for key, raw in top.items():
        if key == "controller":
            kw["controller"] = raw
        elif key == "name":
            kw["name"] = raw
        elif key == "duration_s":
            kw["duration_s"] = _convert(raw, 0.0, key)
        elif key == "seed":
            kw["seed"] = _convert(raw, 0, key)
        else:
            raise ConfigurationError(f"unknown key {key}")

    failures = sections.pop("failures", {})
    for key, raw in failures.items():
        if key == "interval_s":
            kw["failure_interval_s"] = _convert(raw, 0.0, "failures.interval_s")
        elif key == "count":
            kw["failure_count"] = _convert(raw, 0, "failures.count")
        else:
            raise ConfigurationError(f"unknown key failures.{key}")

    workload_vals = sections.pop("workload", {})
    trace = workload_vals.pop("trace", None)
    workload = _update(spec.workload, "workload", workload_vals)
    if trace is not None:
        path = Path(trace)
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            ts, rates = read_trace(path)
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"workload.trace: {exc}") from exc
        workload = replace(workload, mode="trace", trace_t=tuple(ts), trace_rate=tuple(rates))
    try:
        workload = replace(workload)   # re-run validation
    except ValueError as exc:
        raise ConfigurationError(f"workload: {exc}") from exc
    kw["workload"] = workload

    space = spec.space
    for key, raw in sections.pop("space", {}).items():
        if key == "max_parallelism":
            space = replace(space, max_parallelism=_convert(raw, 0, "space.max_parallelism"))
        elif key in PARAM_NAMES:
            parts = [p.strip() for p in raw.split(",")]
            if len(parts) != 3:
                raise ConfigurationError(f"space.{key}: expected 'min, max, step'")
            lo, hi, step = (_convert(p, 0, f"space.{key}") for p in parts)
            space = replace(space, **{key: ParamRange(lo, hi, step)})
        else:
            raise ConfigurationError(f"unknown key space.{key}")
    kw["space"] = space

    hyper = _update(spec.hyper, "hyper", sections.pop("hyper", {}), HYPER_ALIASES)
    if "cmax" in sections:
        hyper = replace(hyper, c_max=_config_from(sections.pop("cmax"), hyper.c_max, "cmax"))
    kw["hyper"] = hyper
    if "static" in sections:
        kw["static_config"] = _config_from(sections.pop("static"), hyper.c_max, "static")
    kw["sim"] = _update(spec.sim, "sim", sections.pop("sim", {}))
    kw["forecast"] = _update(spec.forecast, "forecast", sections.pop("forecast", {}))
    kw["profiler"] = _update(spec.profiler, "profiler", sections.pop("profiler", {}))
    kw["reactive"] = _update(spec.reactive, "reactive", sections.pop("reactive", {}))
    if sections:
        raise ConfigurationError(f"unknown section(s): {', '.join(sorted(sections))}")
    return replace(spec, **kw)


def load_spec(path, seed: int | None = None) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc
    spec = parse_spec_text(text, base_dir=path.parent)
    if seed is not None:
        spec = replace(spec, seed=seed)
    spec.validate()
    return spec
