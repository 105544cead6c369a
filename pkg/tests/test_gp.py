"""GP posterior, likelihood and gradient against an independent dense oracle."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st

from demeter import gp
from demeter.domain import ConfigSpace, Configuration


def oracle_kernel(A, B, ls, sv):
    K = np.empty((len(A), len(B)))
    for i, a in enumerate(A):
        for j, b in enumerate(B):
            K[i, j] = sv * math.exp(-0.5 * sum(((a[d] - b[d]) / ls[d]) ** 2 for d in range(len(a))))
    return K


def oracle_posterior(X, y, Xq, ls, sv, nv):
    K = oracle_kernel(X, X, ls, sv) + nv * np.eye(len(X))
    Ks = oracle_kernel(Xq, X, ls, sv)
    Kinv = np.linalg.inv(K)
    mean = Ks @ Kinv @ y
    var = sv - np.einsum("ij,jk,ik->i", Ks, Kinv, Ks)
    return mean, var


def oracle_mll(X, y, ls, sv, nv):
    K = oracle_kernel(X, X, ls, sv) + nv * np.eye(len(X))
    sign, logdet = np.linalg.slogdet(K)
    assert sign > 0
    return -0.5 * y @ np.linalg.solve(K, y) - 0.5 * logdet - 0.5 * len(y) * math.log(2 * math.pi)


def random_problem(rng, n=None):
    n = n or int(rng.integers(1, 11))
    X = rng.random((n, 5))
    y = rng.standard_normal(n)
    ls = np.exp(rng.uniform(-1.5, 1.0, 5))
    sv = float(np.exp(rng.uniform(-1, 1)))
    nv = float(np.exp(rng.uniform(-6, -1)))
    return X, y, ls, sv, nv


def test_oracle_equivalence_randomized():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    for _ in range(100):
        X, y, ls, sv, nv = random_problem(rng)
        Xq = rng.random((7, 5))
        model = gp.GPModel.build(X, y, ls, sv, nv, standardize=False)
        assert model.jitter == 0.0
        mean, var = model.posterior(Xq)
        om, ov = oracle_posterior(X, y, Xq, ls, sv, nv)
        np.testing.assert_allclose(mean, om, atol=1e-8, rtol=0)
        np.testing.assert_allclose(var, np.maximum(ov, 0), atol=1e-8, rtol=0)
        val, _ = model.log_marginal_likelihood()
        assert val == pytest.approx(oracle_mll(X, y, ls, sv, nv), abs=1e-8)
    assert time.perf_counter() - t0 < 10.0


def test_standardized_targets_map_back_to_original_units():
    rng = np.random.default_rng(3)
    X, y, ls, sv, nv = random_problem(rng, n=6)
    y = 100 + 40 * y
    model = gp.GPModel.build(X, y, ls, sv, nv)
    Xq = rng.random((4, 5))
    ys = (y - y.mean()) / y.std()
    om, ov = oracle_posterior(X, ys, Xq, ls, sv, nv)
    mean, var = model.posterior(Xq)
    np.testing.assert_allclose(mean, om * y.std() + y.mean(), atol=1e-8)
    np.testing.assert_allclose(var, ov * y.var(), atol=1e-8)


def test_two_point_hand_formula():
    # K = [[s+n, k],[k, s+n]], k = s exp(-d^2 / 2 l^2); mean at x0 is k_0^T K^-1 y
    X = np.array([[0.0] * 5, [0.5] + [0.0] * 4])
    y = np.array([1.0, -1.0])
    s, n, l = 1.0, 0.01, 0.5
    k = s * math.exp(-0.5 * (0.5 / l) ** 2)
    a, det = s + n, (s + n) ** 2 - k ** 2
    Kinv = np.array([[a, -k], [-k, a]]) / det
    kq = np.array([s, k])
    model = gp.GPModel.build(X, y, [l] * 5, s, n, standardize=False)
    m, v = model.posterior(X[0])
    assert m == pytest.approx(kq @ Kinv @ y, abs=1e-10)
    assert v == pytest.approx(s - kq @ Kinv @ kq, abs=1e-10)
    assert model.log_marginal_likelihood()[0] == pytest.approx(
        -0.5 * y @ Kinv @ y - 0.5 * math.log(det) - math.log(2 * math.pi), abs=1e-10)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = 0.0
    for _ in range(25):
        X, y, ls, sv, nv = random_problem(rng, n=int(rng.integers(3, 11)))
        model = gp.GPModel.build(X, y, ls, sv, nv, standardize=False)
        theta = model.theta()
        _, grad = model.log_marginal_likelihood(theta)
        h = 1e-5
        fd = np.empty_like(theta)
        for i in range(len(theta)):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (model.log_marginal_likelihood(theta + e)[0]
                     - model.log_marginal_likelihood(theta - e)[0]) / (2 * h)
        rel = np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-3)
        worst = max(worst, rel.max())
    assert worst < 1e-4


def test_single_point_interpolation_and_constant_data():
    x0 = np.full((1, 5), 0.3)
    model = gp.fit(x0, [4.2], restarts=2, seed=0)
    assert model.posterior(x0[0])[0] == pytest.approx(4.2, abs=1e-3)
    X = np.random.default_rng(0).random((5, 5))
    const = gp.fit(X, [7.0] * 5, restarts=2, seed=0)
    mean, var = const.posterior(np.random.default_rng(1).random((10, 5)))
    np.testing.assert_allclose(mean, 7.0, atol=1e-9)
    assert np.all(var <= const.signal_var * const.y_std ** 2 + 1e-12)


def test_prior_reversion_and_symmetry():
    X = np.array([[0.0] * 5, [1.0] + [0.0] * 4])
    model = gp.GPModel.build(X, np.array([2.0, 4.0]), [0.1] * 5, 1.0, 1e-4, standardize=False)
    far_mean, far_var = model.posterior(np.array([0.5, 1, 1, 1, 1.0]))
    assert far_mean == pytest.approx(0.0, abs=1e-9)
    assert far_var == pytest.approx(1.0, abs=1e-9)
    sym = gp.GPModel.build(X, np.array([2.0, 4.0]), [0.5] * 5, 1.0, 1e-4)
    assert sym.posterior(np.array([0.5, 0, 0, 0, 0.0]))[0] == pytest.approx(3.0, abs=1e-12)


@given(st.integers(0, 10_000))
def test_variance_bounds_and_monotone_in_data(seed):
    rng = np.random.default_rng(seed)
    X, y, ls, sv, nv = random_problem(rng, n=int(rng.integers(2, 9)))
    Xq = rng.random((6, 5))
    small = gp.GPModel.build(X[:-1], y[:-1], ls, sv, nv, standardize=False)
    big = gp.GPModel.build(X, y, ls, sv, nv, standardize=False)
    _, v_small = small.posterior(Xq)
    _, v_big = big.posterior(Xq)
    _, v_noisy = big.posterior(Xq, include_noise=True)
    assert np.all(v_big >= 0) and np.all(v_noisy <= sv + nv + 1e-12)
    assert np.all(v_big <= v_small + 1e-10)


def test_duplicates_are_averaged():
    X = np.array([[0.1] * 5, [0.1] * 5, [0.9] * 5])
    model = gp.GPModel.build(X, np.array([1.0, 3.0, 5.0]), [0.3] * 5, 1.0, 1e-3, standardize=False)
    assert model.n == 2
    ref = gp.GPModel.build(X[1:], np.array([2.0, 5.0]), [0.3] * 5, 1.0, 1e-3, standardize=False)
    np.testing.assert_allclose(model.posterior(X[:1])[0], ref.posterior(X[:1])[0])


def test_loo_matches_refits():
    rng = np.random.default_rng(5)
    X, y, ls, sv, nv = random_problem(rng, n=7)
    model = gp.GPModel.build(X, y, ls, sv, nv, standardize=False)
    loo_mean, loo_var = model.loo()
    for i in range(len(y)):
        keep = np.arange(len(y)) != i
        om, ov = oracle_posterior(X[keep], y[keep], X[i:i + 1], ls, sv, nv)
        assert loo_mean[i] == pytest.approx(om[0], abs=1e-8)
        assert loo_var[i] == pytest.approx(ov[0] + nv, abs=1e-8)


def test_joint_samples_match_posterior_moments():
    rng = np.random.default_rng(9)
    X, y, ls, sv, nv = random_problem(rng, n=5)
    model = gp.GPModel.build(X, y, ls, sv, nv)
    Xq = rng.random((3, 5))
    draws = model.sample(Xq, 20_000, np.random.default_rng(0))
    mean, var = model.posterior(Xq)
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.05 * max(1, np.sqrt(var.max())))
    np.testing.assert_allclose(draws.var(axis=0), var, rtol=0.1, atol=1e-3)


def test_fit_improves_likelihood_and_is_seeded():
    rng = np.random.default_rng(1)
    X = rng.random((10, 5))
    y = np.sin(3 * X[:, 0]) + 0.5 * X[:, 1]
    a = gp.fit(X, y, seed=3)
    b = gp.fit(X, y, seed=3)
    np.testing.assert_array_equal(a.theta(), b.theta())
    start = np.concatenate([np.full(5, math.log(0.5)), [0.0, math.log(1e-3)]])
    assert a.log_marginal_likelihood()[0] >= a.log_marginal_likelihood(start)[0] - 1e-9
    assert a.noise_var >= gp.MIN_NOISE


def test_fit_rejects_empty():
    with pytest.raises(ValueError):
        gp.fit(np.empty((0, 5)), [])


def test_normalize(space):
    assert np.all(gp.normalize(space.min_config(), space) == 0)
    assert np.all(gp.normalize(space.max_config(), space) == 1)
    assert gp.normalize(Configuration(12, 1, 1024, 1, 10), space)[0] == pytest.approx(0.4)
    cs = [Configuration(12, 2, 2048, 3, 50), space.max_config()]
    np.testing.assert_allclose(gp.normalize_many(cs, space),
                               [gp.normalize(c, space) for c in cs])
    flat = ConfigSpace(cpu_cores=space.cpu_cores.__class__(2, 2, 1))
    assert gp.normalize(Configuration(4, 2, 1024, 1, 10), flat)[1] == 0.0
