"""Per-segment surrogate models, rank-weighted ensembles and acquisition."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtr

from . import gp
from .analysis import LatencyClusters
from .domain import ConfigSpace, Configuration, Hyperparams, Observation, resource_scalar

QUANTITIES = ("latency", "recovery")


class NoInformation(Exception):
    """No observations exist from which any prediction could be made."""


def segment_index(rate: float, segment_size: float) -> int:
    if rate < 0 or segment_size <= 0:
        raise ValueError("need rate >= 0 and segment_size > 0")
    return int(math.floor(rate / segment_size))


@dataclass
class _Segment:
    observations: list[Observation] = field(default_factory=list)
    version: int = 0


class SegmentStore:
    """Observations bucketed by workload segment, with cached surrogate fits.

    Segments appear lazily on the first observation that lands in them.
    Latency targets are re-transformed with the current clusters at fit time.
    """

    def __init__(self, space: ConfigSpace, hyper: Hyperparams, gp_restarts: int = 8):
        self.space = space
        self.hyper = hyper
        self.gp_restarts = gp_restarts
        self._segments: dict[int, _Segment] = {}
        self._cache: dict[tuple, gp.GPModel] = {}

    def segment_of(self, rate: float) -> int:
        return segment_index(rate, self.hyper.segment_size)

    def add(self, obs: Observation) -> int:
        seg = self.segment_of(obs.workload_rate)
        bucket = self._segments.setdefault(seg, _Segment())
        bucket.observations.append(obs)
        bucket.version += 1
        return seg

    def observations(self, seg: int) -> list[Observation]:
        bucket = self._segments.get(seg)
        return list(bucket.observations) if bucket else []

    def all_observations(self) -> list[Observation]:
        return [o for s in sorted(self._segments) for o in self._segments[s].observations]

    def segments(self) -> list[int]:
        return sorted(self._segments)

    def count(self, seg: int) -> int:
        bucket = self._segments.get(seg)
        return len(bucket.observations) if bucket else 0

    def __len__(self) -> int:
        return sum(len(b.observations) for b in self._segments.values())

    def profiled_configs(self, seg: int) -> set[Configuration]:
        return {o.config for o in self.observations(seg)}

    def _fit(self, key: tuple, X: np.ndarray, y: np.ndarray, seed: int) -> gp.GPModel:
        model = self._cache.get(key)
        if model is None:
            model = gp.fit(X, y, restarts=self.gp_restarts, seed=seed)
            self._cache[key] = model
        return model

    def models(self, seg: int, clusters: LatencyClusters) -> "SegmentModels":
        bucket = self._segments.get(seg)
        obs = list(bucket.observations) if bucket else []
        if not obs:
            return SegmentModels(seg, [], None, None)
        X = gp.normalize_many([o.config for o in obs], self.space)
        y_lat = np.asarray(clusters.transform([o.latency_avg_ms for o in obs]), float).reshape(-1)
        y_rec = recovery_targets(obs, self.hyper.recovery_max_timeout)
        ckey = (round(clusters.anchor_ms, 9), round(clusters.scale, 12), clusters.offset)
        seed = seg * 7919 + bucket.version
        lat = self._fit(("lat", seg, bucket.version, ckey), X, y_lat, seed)
        rec = self._fit(("rec", seg, bucket.version), X, y_rec, seed + 1)
        return SegmentModels(seg, obs, lat, rec, X=X, targets={"latency": y_lat, "recovery": y_rec})


def recovery_targets(obs: Sequence[Observation], timeout: float) -> np.ndarray:
    """Recovery seconds with NR imputed as the timeout."""
    return np.array([timeout if o.recovery_s is None else min(o.recovery_s, timeout)
                     for o in obs], dtype=float)


@dataclass
class SegmentModels:
    segment_index: int
    observations: list[Observation]
    latency_gp: gp.GPModel | None
    recovery_gp: gp.GPModel | None
    X: np.ndarray | None = None
    targets: dict[str, np.ndarray] = field(default_factory=dict)

    def model(self, quantity: str) -> gp.GPModel | None:
        return self.latency_gp if quantity == "latency" else self.recovery_gp

    @property
    def n(self) -> int:
        return len(self.observations)


# --- RGPE -----------------------------------------------------------------

def ranking_loss(samples: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Number of mis-ranked ordered pairs for each row of ``samples``."""
    y_less = y[:, None] < y[None, :]
    f_less = samples[:, :, None] < samples[:, None, :]
    return np.sum(f_less ^ y_less[None], axis=(1, 2))


def rgpe_weights(target: SegmentModels, supports: Sequence[SegmentModels],
                 quantity: str = "latency", n_samples: int = 256, rng_seed=0) -> np.ndarray:
    """Ensemble weights, ordered ``[target, *supports]``.

    Each support is sampled jointly at the target's inputs; the target itself
    is sampled from its leave-one-out posterior. A model's weight is the
    fraction of draws in which it attains the minimal ranking loss, ties split
    evenly.
    """
    supports = [s for s in supports if s.n >= 2]
    k = len(supports)
    if target.n < 2:
        if k == 0:
            if target.n >= 1:
                return np.array([1.0])
            raise NoInformation("no models to weight")
        return np.concatenate([[0.0], np.full(k, 1.0 / k)])
    if k == 0:
        return np.array([1.0])

    rng = np.random.default_rng(rng_seed)
    # duplicate configurations are averaged inside the GP, so rank its data
    tm = target.model(quantity)
    X, y = tm.X, tm.y
    losses = np.empty((n_samples, k + 1))
    for i, sup in enumerate(supports):
        draws = sup.model(quantity).sample(X, n_samples, rng)
        losses[:, i + 1] = ranking_loss(draws, y)
    loo_mean, loo_var = tm.loo()
    draws = loo_mean + np.sqrt(loo_var) * rng.standard_normal((n_samples, len(y)))
    losses[:, 0] = ranking_loss(draws, y)

    best = losses == losses.min(axis=1, keepdims=True)
    share = best / best.sum(axis=1, keepdims=True)
    return share.mean(axis=0)


def ensemble_posterior(means: Sequence, variances: Sequence, weights: Sequence):
    """Weighted mixture: mean = sum a_i mu_i, variance = sum a_i^2 var_i."""
    w = np.asarray(weights, dtype=float)
    mean = sum(a * np.asarray(m, float) for a, m in zip(w, means))
    var = sum(a * a * np.asarray(v, float) for a, v in zip(w, variances))
    return mean, var


@dataclass
class EnsembleModel:
    target_segment: int
    members: list[SegmentModels]     # members[0] is the target segment
    weights: dict[str, np.ndarray]

    def posterior(self, X: np.ndarray, quantity: str):
        means, variances, ws = [], [], []
        for member, a in zip(self.members, self.weights[quantity]):
            if a == 0.0 or member.model(quantity) is None:
                continue
            m, v = member.model(quantity).posterior(X)
            means.append(m)
            variances.append(v)
            ws.append(a)
        return ensemble_posterior(means, variances, ws)


def build_ensemble(store: SegmentStore, target_seg: int, clusters: LatencyClusters,
                   rng_seed=0) -> EnsembleModel:
    target = store.models(target_seg, clusters)
    supports = [store.models(s, clusters) for s in store.segments()
                if s != target_seg and store.count(s) >= 2]
    if target.n == 0 and not supports:
        raise NoInformation(f"no observations for segment {target_seg} or any support")
    weights = {}
    for qi, q in enumerate(QUANTITIES):
        weights[q] = rgpe_weights(target, supports, q, store.hyper.rgpe_samples,
                                  rng_seed=[*np.atleast_1d(rng_seed).tolist(), target_seg, qi])
    members = [target] + supports if len(weights["latency"]) > 1 else [target]
    return EnsembleModel(target_seg, members, weights)


# --- feasibility and acquisition -----------------------------------------

def _phi_ratio(margin, sd, inclusive: bool):
    margin = np.asarray(margin, float)
    sd = np.asarray(sd, float)
    safe = np.where(sd > 0, sd, 1.0)
    # zero variance: step function matching the strict/inclusive constraint
    degenerate = np.where(margin >= 0 if inclusive else margin > 0, 1.0, 0.0)
    return np.where(sd > 0, ndtr(margin / safe), degenerate)


def feasibility_probability(mu_lat, sd_lat, mu_rec, sd_rec, recovery_constraint: float):
    """P(latency < 0.5) * P(recovery <= RC) under independent Gaussian posteriors."""
    out = _phi_ratio(0.5 - np.asarray(mu_lat), sd_lat, False) * _phi_ratio(
        recovery_constraint - np.asarray(mu_rec), sd_rec, True)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class ScoredCandidate:
    config: Configuration
    score: float
    feasibility: float
    improvement: float


def acquisition(ensemble: EnsembleModel, candidates: Sequence[Configuration],
                space: ConfigSpace, recovery_constraint: float, best_feasible_u: float,
                kappa: float = 0.05, exclude=()) -> list[ScoredCandidate]:
    """Feasibility-weighted resource improvement plus an uncertainty bonus.

    Sorted by descending score; ties keep the candidates' input order.
    """
    excluded = set(exclude)
    cands = [c for c in candidates if c not in excluded]
    if not cands:
        return []
    X = gp.normalize_many(cands, space)
    mu_l, var_l = ensemble.posterior(X, "latency")
    mu_r, var_r = ensemble.posterior(X, "recovery")
    sd_l, sd_r = np.sqrt(var_l), np.sqrt(var_r)
    pf = feasibility_probability(mu_l, sd_l, mu_r, sd_r, recovery_constraint)
    u = np.array([resource_scalar(c, space) for c in cands])
    improvement = np.maximum(best_feasible_u - u, 0.0)
    score = improvement * pf + kappa * (sd_l + sd_r / recovery_constraint)
    order = sorted(range(len(cands)), key=lambda i: -score[i])
    return [ScoredCandidate(cands[i], float(score[i]), float(pf[i]), float(improvement[i]))
            for i in order]


@dataclass(frozen=True)
class CandidatePrediction:
    config: Configuration
    latency_mean: float
    recovery_mean: float
    feasible: bool
    cpu_units: int
    mem_units: int
    scalar: float


def predict_candidates(ensemble: EnsembleModel | None, candidates: Sequence[Configuration],
                       space: ConfigSpace, recovery_constraint: float) -> list[CandidatePrediction]:
    """Predicted transformed latency and recovery; feasible iff lat < 0.5 and rec <= RC."""
    if ensemble is None:
        raise NoInformation("no ensemble")
    X = gp.normalize_many(list(candidates), space)
    mu_l, _ = ensemble.posterior(X, "latency")
    mu_r, _ = ensemble.posterior(X, "recovery")
    out = []
    for c, ml, mr in zip(candidates, np.atleast_1d(mu_l), np.atleast_1d(mu_r)):
        out.append(CandidatePrediction(c, float(ml), float(mr),
                                       bool(ml < 0.5 and mr <= recovery_constraint),
                                       c.cpu_units, c.mem_units, resource_scalar(c, space)))
    return out
