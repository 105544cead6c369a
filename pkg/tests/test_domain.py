
import pytest
from hypothesis import given, strategies as st

from demeter.domain import (DEFAULT_CMAX, ConfigSpace, Configuration, ConfigurationError,
                            Hyperparams, Observation, ParamRange, enumerate_space,
                            resource_scalar)


def test_default_space_has_2592_points(space):
    configs = enumerate_space(space)
    assert len(configs) == 2592 == 6 * 3 * 4 * 4 * 9
    assert len(set(configs)) == 2592
    assert configs == sorted(configs)


def test_degenerate_and_two_point_grids():
    one = ConfigSpace(ParamRange(8, 8, 4), ParamRange(2, 2, 1), ParamRange(1024, 1024, 1024),
                      ParamRange(1, 1, 1), ParamRange(10, 10, 10))
    assert enumerate_space(one) == [Configuration(8, 2, 1024, 1, 10)]
    two = ConfigSpace(ParamRange(4, 8, 4), ParamRange(1, 1, 1), ParamRange(1024, 1024, 1024),
                      ParamRange(1, 1, 1), ParamRange(10, 10, 10))
    assert [c.workers for c in enumerate_space(two)] == [4, 8]


def test_invalid_space_is_rejected():
    bad = ConfigSpace(workers=ParamRange(4, 22, 4))
    with pytest.raises(ConfigurationError):
        enumerate_space(bad)
    with pytest.raises(ConfigurationError):
        ConfigSpace(workers=ParamRange(8, 4, 4)).validate()


def test_resource_scalar_reference_values(space):
    # 0.5 * 24/72 + 0.5 * 98304/98304
    assert resource_scalar(DEFAULT_CMAX, space) == pytest.approx(2.0 / 3.0, abs=1e-12)
    assert resource_scalar(Configuration(24, 3, 4096, 1, 10), space) == pytest.approx(1.0)
    small = Configuration(8, 1, 1024, 2, 30)
    assert resource_scalar(small, space) < resource_scalar(Configuration(8, 1, 4096, 2, 30), space)


configs = st.builds(Configuration, st.sampled_from([4, 8, 12, 16, 20, 24]), st.integers(1, 3),
                    st.sampled_from([1024, 2048, 3072, 4096]), st.integers(1, 4),
                    st.sampled_from(range(10, 100, 10)))


@given(configs, st.sampled_from(["workers", "cpu_cores", "memory_mb"]))
def test_resource_scalar_strictly_monotone(c, field):
    space = ConfigSpace()
    r = getattr(space, field)
    v = getattr(c, field)
    if v + r.step > r.max:
        return
    bigger = Configuration(**{**c.__dict__, field: v + r.step})
    assert resource_scalar(bigger, space) > resource_scalar(c, space)


@given(configs, st.integers(1, 4), st.sampled_from(range(10, 100, 10)))
def test_resource_scalar_ignores_slots_and_checkpoint(c, slots, ckpt):
    space = ConfigSpace()
    other = Configuration(c.workers, c.cpu_cores, c.memory_mb, slots, ckpt)
    assert resource_scalar(other, space) == resource_scalar(c, space)


@given(configs)
def test_config_id_round_trip(c):
    assert Configuration.from_id(c.config_id) == c


def test_config_id_format():
    assert DEFAULT_CMAX.config_id == "w24-c1-m4096-s1-k10"
    with pytest.raises(ConfigurationError):
        Configuration.from_id("w24-c1")


@given(configs, st.floats(0, 1e5), st.floats(1e-3, 1e6))
def test_observation_resource_fields(c, rate, lat):
    obs = Observation(c, rate, lat, None)
    assert obs.cpu_units == c.workers * c.cpu_cores
    assert obs.mem_units == c.workers * c.memory_mb


def test_observation_invariants():
    with pytest.raises(ValueError):
        Observation(DEFAULT_CMAX, 1000.0, 0.0, 10.0)
    with pytest.raises(ValueError):
        Observation(DEFAULT_CMAX, 1000.0, 5.0, -1.0)


def test_hyperparams_defaults_and_validation(space):
    hp = Hyperparams()
    hp.validate(space)
    assert (hp.segment_size, hp.safety_buffer, hp.efficiency_threshold) == (10_000, 0.3, 0.05)
    assert (hp.recovery_constraint, hp.recovery_max_timeout) == (180, 360)
    assert (hp.stabilization_s, hp.latency_window_s, hp.optimize_interval_s) == (120, 60, 600)
    for bad in (dict(safety_buffer=1.0), dict(efficiency_threshold=-0.1),
                dict(recovery_constraint=400.0), dict(stabilization_s=0.0),
                dict(c_max=Configuration(28, 1, 4096, 1, 10))):
        with pytest.raises(ConfigurationError):
            hp.with_(**bad).validate(space)
