"""Latency-constraint derivation and recovery-time measurement."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class LatencyClusters:
    """Two-cluster split of latencies and the monotone map raw ms -> [0, 1].

    ``transform(l) = clamp(offset + scale * log(l / anchor), 0, 1)``; the
    boundary between the clusters always maps to exactly 0.5.
    """

    normal_centroid_ms: float
    abnormal_centroid_ms: float
    boundary_ms: float
    anchor_ms: float
    scale: float
    offset: float = 0.0

    def transform(self, latency_ms):
        lat = np.asarray(latency_ms, dtype=float)
        t = self.offset + self.scale * np.log(np.maximum(lat, 1e-12) / self.anchor_ms)
        t = np.clip(t, 0.0, 1.0)
        return float(t) if t.ndim == 0 else t

    @property
    def latency_constraint_ms(self) -> float:
        return self.boundary_ms


def _two_means_1d(values: np.ndarray, max_iter: int = 100) -> tuple[float, float, np.ndarray]:
    lo, hi = float(values.min()), float(values.max())
    labels = None
    for _ in range(max_iter):
        new = np.abs(values - hi) < np.abs(values - lo)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        if not new.any() or new.all():
            break
        lo, hi = float(values[~new].mean()), float(values[new].mean())
    return lo, hi, labels


def fit_latency_clusters(latencies: Sequence[float]) -> LatencyClusters:
    """Split latencies into normal/abnormal with 2-means on log(l / p1).

    p1 is the first percentile. 2-means starts from (min, max) so the result
    is deterministic.
    """
    lat = np.asarray(latencies, dtype=float)
    if lat.size < 2:
        raise ValueError("need at least two latency samples")
    if np.any(lat <= 0):
        raise ValueError("latencies must be > 0")
    if np.all(lat == lat[0]):
        common = float(lat[0])
        # everything normal; boundary at twice the common value, common -> 0.25
        return LatencyClusters(common, common, 2.0 * common, common,
                               scale=0.25 / math.log(2.0), offset=0.25)

    p1 = float(np.percentile(lat, 1))
    logs = np.log(lat / p1)
    c_norm, c_abn, _ = _two_means_1d(logs)
    mid = 0.5 * (c_norm + c_abn)
    boundary = p1 * math.exp(mid)
    anchor = p1
    if mid <= 1e-12:
        # boundary at or below p1 (a lone low outlier); anchor on the normal centroid
        anchor = p1 * math.exp(c_norm)
    scale = 0.5 / math.log(boundary / anchor)
    return LatencyClusters(p1 * math.exp(c_norm), p1 * math.exp(c_abn), boundary, anchor, scale)


def classify_latency(clusters: LatencyClusters, latency_ms: float) -> tuple[float, bool]:
    """Transformed latency and whether it is normal (< 0.5)."""
    t = clusters.transform(latency_ms)
    return t, t < 0.5


# --- recovery measurement -------------------------------------------------

class CalibrationError(ValueError):
    pass


MIN_CALIBRATION = 30
THRESHOLD_K = 3.0
FLOOR_FRACTION = 0.05
ABSOLUTE_FLOOR = 1.0


@dataclass(frozen=True)
class MetricModel:
    """One-step AR(1)-around-the-mean predictor plus residual threshold.

    ``phi == 1`` is pure persistence, ``phi == 0`` predicts the calibration
    mean.
    """

    mean: float
    phi: float
    threshold: float

    def predict(self, prev: float) -> float:
        return self.mean + self.phi * (prev - self.mean)


def _fit_metric(values: np.ndarray) -> MetricModel:
    mean = float(values.mean())
    a = values[:-1] - mean
    b = values[1:] - mean
    denom = float(a @ a)
    phi = float(np.clip((a @ b) / denom, 0.0, 1.0)) if denom > 1e-12 else 0.0
    resid = b - phi * a
    threshold = abs(float(resid.mean())) + THRESHOLD_K * float(resid.std())
    floor = max(FLOOR_FRACTION * abs(mean), ABSOLUTE_FLOOR)
    return MetricModel(mean, phi, max(threshold, floor))


@dataclass
class AnomalyDetector:
    """Residual-threshold detector over input throughput and consumer lag."""

    throughput: MetricModel | None = None
    lag: MetricModel | None = None
    last_throughput: float = 0.0
    last_lag: float = 0.0

    @property
    def calibrated(self) -> bool:
        return self.throughput is not None and self.lag is not None

    def is_anomalous(self, throughput: float, lag: float, prev_throughput: float,
                     prev_lag: float) -> bool:
        r_tp = abs(throughput - self.throughput.predict(prev_throughput))
        r_lag = abs(lag - self.lag.predict(prev_lag))
        return r_tp > self.throughput.threshold or r_lag > self.lag.threshold


def calibrate(samples: Iterable, detector: AnomalyDetector | None = None) -> AnomalyDetector:
    """Calibrate thresholds on a stream assumed to be normal.

    ``samples`` are objects with ``input_throughput`` and ``consumer_lag``
    attributes, or ``(throughput, lag)`` pairs.
    """
    tp, lag = [], []
    for s in samples:
        if isinstance(s, tuple):
            tp.append(float(s[0]))
            lag.append(float(s[1]))
        else:
            tp.append(float(s.input_throughput))
            lag.append(float(s.consumer_lag))
    if len(tp) < MIN_CALIBRATION:
        raise CalibrationError(f"need >= {MIN_CALIBRATION} samples, got {len(tp)}")
    det = detector if detector is not None else AnomalyDetector()
    det.throughput = _fit_metric(np.asarray(tp))
    det.lag = _fit_metric(np.asarray(lag))
    det.last_throughput, det.last_lag = tp[-1], lag[-1]
    return det


@dataclass(frozen=True)
class RecoveryOutcome:
    status: str  # "ok" | "nr" | "timeout"
    seconds: float | None = None

    @property
    def measured(self) -> bool:
        return self.status == "ok"


@dataclass
class RecoveryTracker:
    """Incremental recovery measurement after a failure at ``failure_time``.

    Recovery ends at the first sample that opens a run of normal samples
    lasting ``grace_s``. No anomaly within ``grace_s`` of the failure means
    NR; exceeding ``timeout_s`` means Timeout.

    With ``catch_up`` a sample only counts as normal once the lag is back
    within one threshold of its value at the failure, so a job that can never
    drain its backlog times out instead of settling into a steady climb.
    """

    detector: AnomalyDetector
    failure_time: float
    grace_s: float = 30.0
    timeout_s: float = 360.0
    catch_up: bool = True
    outcome: RecoveryOutcome | None = None
    _prev: tuple[float, float] = field(init=False)
    _lag_limit: float = field(default=math.inf, init=False)
    _anomaly_seen: bool = field(default=False, init=False)
    _normal_since: float | None = field(default=None, init=False)

    def __post_init__(self):
        if not self.detector.calibrated:
            raise CalibrationError("detector is not calibrated")
        self._prev = (self.detector.last_throughput, self.detector.last_lag)
        if self.catch_up:
            self._lag_limit = self.detector.last_lag + self.detector.lag.threshold

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def push(self, t: float, throughput: float, lag: float) -> RecoveryOutcome | None:
        if self.outcome is not None or t < self.failure_time:
            return self.outcome
        anomalous = self.detector.is_anomalous(throughput, lag, *self._prev)
        if not anomalous and self._anomaly_seen and lag > self._lag_limit:
            anomalous = True
        self._prev = (throughput, lag)
        elapsed = t - self.failure_time
        if anomalous:
            self._anomaly_seen = True
            self._normal_since = None
        elif self._anomaly_seen:
            if self._normal_since is None:
                self._normal_since = t
            if t - self._normal_since >= self.grace_s:
                dur = self._normal_since - self.failure_time
                self.outcome = (RecoveryOutcome("timeout") if dur > self.timeout_s
                                else RecoveryOutcome("ok", dur))
                return self.outcome
        if not self._anomaly_seen and elapsed >= self.grace_s:
            self.outcome = RecoveryOutcome("nr")
        elif self._normal_since is None and elapsed > self.timeout_s:
            self.outcome = RecoveryOutcome("timeout")
        elif self._normal_since is not None and self._normal_since - self.failure_time > self.timeout_s:
            self.outcome = RecoveryOutcome("timeout")
        return self.outcome

    def finish(self) -> RecoveryOutcome:
        """Close an unfinished measurement at the end of the stream."""
        if self.outcome is None:
            self.outcome = RecoveryOutcome("timeout" if self._anomaly_seen else "nr")
        return self.outcome


def measure_recovery(detector: AnomalyDetector, stream: Iterable, failure_time: float,
                     grace_s: float = 30.0, timeout_s: float = 360.0,
                     catch_up: bool = True) -> RecoveryOutcome:
    """Recovery duration from ``failure_time`` over a finished stream.

    ``stream`` yields ``(t, throughput, lag)`` tuples or samples with
    ``timestamp``, ``input_throughput`` and ``consumer_lag``.
    """
    tracker = RecoveryTracker(detector, failure_time, grace_s, timeout_s, catch_up)
    for s in stream:
        if isinstance(s, tuple):
            t, tp, lag = s
        else:
            t, tp, lag = s.timestamp, s.input_throughput, s.consumer_lag
        if tracker.push(t, tp, lag) is not None:
            break
    return tracker.finish()
