import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from demeter.domain import ConfigSpace, Configuration, Hyperparams, Observation, resource_scalar
from demeter.forecast import ForecastModel
from demeter.mobo import CandidatePrediction, SegmentStore
from demeter.optimizer import ActionKind, Optimizer, decide, select_with_buffer
from demeter.sim import ClusterSim

SPACE = ConfigSpace()
CMAX = Hyperparams().c_max


def pred(cfg, feasible=True):
    return CandidatePrediction(cfg, 0.1 if feasible else 0.9, 60.0, feasible, cfg.cpu_units,
                               cfg.mem_units, resource_scalar(cfg, SPACE))


def ladder(n=10):
    return [pred(Configuration(2 * (i + 1), 1, 4096, 1, 10)) for i in range(n)]


def warm_forecaster(rate, n=40):
    f = ForecastModel()
    for _ in range(n):
        f.update(rate)
    return f


def make_optimizer(store=None, hyper=None, rate=25_000.0):
    hyper = hyper or Hyperparams()
    store = store or SegmentStore(SPACE, hyper, gp_restarts=2)
    opt = Optimizer(SPACE, hyper, store, warm_forecaster(rate))
    for x in np.linspace(800, 1200, 30):
        opt.observe_latency(float(x))
    for x in (30_000.0, 40_000.0):
        opt.observe_latency(x)
    return opt


# --- decision flow -----------------------------------------------------------

def test_safety_buffer_selects_sorted_index_three():
    cands = ladder(10)
    shuffled = [cands[i] for i in (7, 2, 9, 0, 5, 1, 8, 3, 6, 4)]
    assert select_with_buffer(shuffled, 0.30) is cands[3]
    assert math.ceil(0.3 * 9) == 3


def test_safety_buffer_value_mode():
    cands = ladder(10)
    # cheapest is 2 workers; 1.3x its scalar first reached at 3 or more workers
    chosen = select_with_buffer(cands, 0.30, mode="value")
    assert chosen.scalar >= 1.3 * cands[0].scalar - 1e-12
    assert all(c.scalar < 1.3 * cands[0].scalar for c in cands if c.scalar < chosen.scalar)


def test_decide_reconfigures_to_buffered_choice():
    action = decide(CMAX, ladder(10), Hyperparams(), SPACE)
    assert action.kind is ActionKind.RECONFIGURE
    assert action.config == ladder(10)[3].config


def test_small_saving_keeps_current():
    current = Configuration(24, 1, 4096, 1, 10)
    near = Configuration(24, 1, 4096, 1, 30)  # same scalar, zero saving
    cheaper = Configuration(23, 1, 4096, 1, 10)
    saving = 1 - resource_scalar(cheaper, SPACE) / resource_scalar(current, SPACE)
    assert 0 < saving < 0.05
    preds = [pred(cheaper), pred(current), pred(near)]
    action = decide(current, preds, Hyperparams(safety_buffer=0.0), SPACE)
    assert action.kind is ActionKind.KEEP


def test_infeasible_current_without_options_reverts():
    current = Configuration(4, 1, 4096, 1, 10)
    action = decide(current, [pred(current, feasible=False)], Hyperparams(), SPACE)
    assert action.kind is ActionKind.REVERT_MAX
    assert action.config == CMAX
    assert decide(CMAX, [pred(CMAX, False)], Hyperparams(), SPACE).kind is ActionKind.KEEP


def test_never_selects_infeasible():
    preds = [pred(Configuration(2, 1, 4096, 1, 10), feasible=False)] + ladder(5)[2:]
    action = decide(CMAX, preds, Hyperparams(safety_buffer=0.0), SPACE)
    assert action.config == ladder(5)[2].config


@given(st.lists(st.tuples(st.integers(1, 24), st.integers(1, 4), st.booleans()),
                min_size=1, max_size=25))
def test_zero_buffer_zero_threshold_is_argmin(items):
    preds = [pred(Configuration(w, c, 4096, 1, 10), f) for w, c, f in items]
    feasible = [p for p in preds if p.feasible]
    action = decide(CMAX, preds, Hyperparams(safety_buffer=0.0, efficiency_threshold=0.0), SPACE)
    if not feasible:
        assert action.kind is ActionKind.KEEP
        return
    best = min(p.scalar for p in feasible)
    if best < resource_scalar(CMAX, SPACE):
        assert action.kind is ActionKind.RECONFIGURE
        assert resource_scalar(action.config, SPACE) == pytest.approx(best)


@given(st.lists(st.integers(1, 24), min_size=1, max_size=20, unique=True),
       st.floats(0, 0.95), st.floats(0, 0.95))
def test_larger_buffer_never_cheaper(workers, a, b):
    cands = [pred(Configuration(w, 1, 4096, 1, 10)) for w in workers]
    lo, hi = sorted((a, b))
    assert select_with_buffer(cands, hi).scalar >= select_with_buffer(cands, lo).scalar


# --- optimizer step ------------------------------------------------------------

def test_abnormal_latency_reverts_to_cmax():
    opt = make_optimizer()
    current = Configuration(6, 1, 4096, 1, 10)
    action = opt.step(current, 35_000.0, now=0.0)
    assert action.kind is ActionKind.REVERT_MAX
    assert opt.profiler_state.events[2].kind == "revert"
    assert opt.step(CMAX, 35_000.0).kind is ActionKind.KEEP


def test_no_information_off_cmax_reverts():
    opt = make_optimizer()
    action = opt.step(Configuration(6, 1, 4096, 1, 10), 1000.0)
    assert action.kind is ActionKind.REVERT_MAX
    assert action.reason == "no information"
    assert make_optimizer().step(CMAX, 1000.0).kind is ActionKind.KEEP


def test_too_few_target_observations_count_as_no_information():
    hyper = Hyperparams(min_target_observations=3)
    store = SegmentStore(SPACE, hyper, gp_restarts=2)
    for w in (8, 16):
        store.add(Observation(Configuration(w, 1, 4096, 1, 10), 25_000.0, 900.0, 60.0))
    opt = make_optimizer(store, hyper)
    assert opt.step(Configuration(6, 1, 4096, 1, 10), 1000.0).reason == "no information"


def test_step_downscales_from_cmax_with_data():
    hyper = Hyperparams()
    store = SegmentStore(SPACE, hyper, gp_restarts=2)
    for w in (4, 8, 12, 16, 20, 24):
        lat = 900.0 if w >= 12 else 40_000.0
        store.add(Observation(Configuration(w, 1, 4096, 1, 10), 25_000.0, lat, 90.0))
    opt = make_optimizer(store, hyper)
    action = opt.step(CMAX, 1000.0, now=100.0)
    assert action.kind is ActionKind.RECONFIGURE
    assert resource_scalar(action.config, SPACE) < resource_scalar(CMAX, SPACE)
    assert opt.profiler_state.events[2].kind == "downscale"
    rec = opt.history[-1]
    assert rec.segment == 2 and rec.normal


def test_apply_and_cooldown():
    opt = make_optimizer()
    sim = ClusterSim(Configuration(6, 1, 4096, 1, 10))
    sim.step(10.0, 1000.0)
    h = sim.state_hash()
    keep = opt.step(CMAX, 1000.0)
    assert not opt.apply(keep, sim, 0.0)
    assert sim.state_hash() == h
    revert = opt.step(Configuration(6, 1, 4096, 1, 10), 35_000.0)
    assert opt.apply(revert, sim, 0.0)
    assert sim.config == CMAX
    for _ in range(10):
        sim.step(10.0, 1000.0)
    assert not opt.apply(revert, sim, 300.0)
    assert opt.apply(revert, sim, 600.0)
