"""Exact Gaussian-process regression with a squared-exponential ARD kernel."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from .domain import ConfigSpace, Configuration

JITTER_LADDER = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)
MIN_NOISE = 1e-6

# log-space box for the optimiser: lengthscales, signal variance, noise variance
_LOG_LS_BOUNDS = (math.log(0.05), math.log(20.0))
_LOG_SV_BOUNDS = (math.log(0.05), math.log(20.0))
_LOG_NV_BOUNDS = (math.log(MIN_NOISE), math.log(1.0))


class GPFitError(RuntimeError):
    pass


def normalize(config: Configuration, space: ConfigSpace) -> np.ndarray:
    out = np.empty(5)
    for i, (r, v) in enumerate(zip(space.ranges(), config.as_tuple())):
        out[i] = 0.0 if r.max == r.min else (v - r.min) / (r.max - r.min)
    return out


def normalize_many(configs, space: ConfigSpace) -> np.ndarray:
    if not configs:
        return np.empty((0, 5))
    arr = np.array([c.as_tuple() for c in configs], dtype=float)
    lo = np.array([r.min for r in space.ranges()], dtype=float)
    span = np.array([r.max - r.min for r in space.ranges()], dtype=float)
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (arr - lo) / safe, 0.0)


def se_kernel(A: np.ndarray, B: np.ndarray, lengthscales, signal_var: float) -> np.ndarray:
    diff = (A[:, None, :] - B[None, :, :]) / np.asarray(lengthscales)
    return signal_var * np.exp(-0.5 * np.sum(diff ** 2, axis=-1))


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    n = K.shape[0]
    for jitter in JITTER_LADDER:
        try:
            return np.linalg.cholesky(K + jitter * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            continue
    raise GPFitError("kernel matrix not positive definite after jitter escalation")


def _dedupe(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(uniq) == len(X):
        return X, y
    sums = np.zeros(len(uniq))
    counts = np.zeros(len(uniq))
    np.add.at(sums, inverse, y)
    np.add.at(counts, inverse, 1.0)
    return uniq, sums / counts


@dataclass(frozen=True, eq=False)
class GPModel:
    """A fitted GP. Targets are standardised internally; every public output
    is in the original units of ``y``."""

    X: np.ndarray
    y: np.ndarray
    lengthscales: np.ndarray
    signal_var: float
    noise_var: float
    y_mean: float
    y_std: float
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float

    @classmethod
    def build(cls, X, y, lengthscales, signal_var, noise_var, standardize=True) -> "GPModel":
        """Factorise the kernel matrix for fixed hyper-parameters."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).reshape(-1)
        if len(X) != len(y) or len(y) == 0:
            raise ValueError("X and y must be non-empty and of equal length")
        X, y = _dedupe(X, y)
        ls = np.broadcast_to(np.asarray(lengthscales, dtype=float), (X.shape[1],)).copy()
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be > 0")
        noise_var = max(float(noise_var), MIN_NOISE)
        if standardize:
            y_mean = float(np.mean(y))
            y_std = float(np.std(y))
            if y_std < 1e-12:
                y_std = 1.0
        else:
            y_mean, y_std = 0.0, 1.0
        ys = (y - y_mean) / y_std
        K = se_kernel(X, X, ls, signal_var) + noise_var * np.eye(len(X))
        L, jitter = _cholesky(K)
        alpha = cho_solve((L, True), ys)
        return cls(X, y, ls, float(signal_var), noise_var, y_mean, y_std, L, alpha, jitter)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def y_standardized(self) -> np.ndarray:
        return (self.y - self.y_mean) / self.y_std

    def theta(self) -> np.ndarray:
        return np.concatenate([np.log(self.lengthscales),
                               [math.log(self.signal_var), math.log(self.noise_var)]])

    def posterior(self, x, include_noise: bool = False):
        """Posterior mean and variance at one point or at each row of ``x``."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        Xq = np.atleast_2d(x)
        Ks = se_kernel(Xq, self.X, self.lengthscales, self.signal_var)
        mean_s = Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True)
        var_s = np.maximum(self.signal_var - np.sum(v ** 2, axis=0), 0.0)
        if include_noise:
            var_s = var_s + self.noise_var
        mean = mean_s * self.y_std + self.y_mean
        var = var_s * self.y_std ** 2
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    def sample(self, Xq: np.ndarray, n_samples: int, rng: np.random.Generator) -> np.ndarray:
        """Joint draws of the latent function at ``Xq`` (shape ``(n_samples, len(Xq))``)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        Ks = se_kernel(Xq, self.X, self.lengthscales, self.signal_var)
        Kss = se_kernel(Xq, Xq, self.lengthscales, self.signal_var)
        mean = Ks @ self.alpha
        v = solve_triangular(self.chol, Ks.T, lower=True)
        cov = Kss - v.T @ v
        cov = 0.5 * (cov + cov.T)
        L, _ = _cholesky(cov + 1e-10 * np.eye(len(Xq)))
        z = rng.standard_normal((n_samples, len(Xq)))
        draws = mean + z @ L.T
        return draws * self.y_std + self.y_mean

    def loo(self) -> tuple[np.ndarray, np.ndarray]:
        """Closed-form leave-one-out predictive means and variances at the training inputs."""
        n = self.n
        Kinv = cho_solve((self.chol, True), np.eye(n))
        diag = np.diag(Kinv)
        ys = self.y_standardized
        mean_s = ys - (Kinv @ ys) / diag
        var_s = 1.0 / diag
        return mean_s * self.y_std + self.y_mean, var_s * self.y_std ** 2

    def log_marginal_likelihood(self, theta=None) -> tuple[float, np.ndarray]:
        """Log marginal likelihood of the standardised targets and its gradient.

        ``theta`` is the log-parameter vector ``[log l_1..l_D, log s2, log n2]``;
        by default the model's own hyper-parameters are used.
        """
        if theta is None:
            theta = self.theta()
        return _lml_and_grad(np.asarray(theta, float), self.X, self.y_standardized,
                             _sq_dists(self.X))


def _sq_dists(X: np.ndarray) -> np.ndarray:
    return (X[:, None, :] - X[None, :, :]) ** 2


def _lml_and_grad(theta, X, ys, D) -> tuple[float, np.ndarray]:
    n, dim = X.shape
    ls = np.exp(theta[:dim])
    sv = math.exp(theta[dim])
    nv = math.exp(theta[dim + 1])
    Kf = sv * np.exp(-0.5 * np.sum(D / ls ** 2, axis=-1))
    K = Kf + nv * np.eye(n)
    L = np.linalg.cholesky(K)
    alpha = cho_solve((L, True), ys)
    lml = -0.5 * ys @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2 * math.pi)
    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n))
    grad = np.empty(dim + 2)
    for d in range(dim):
        grad[d] = 0.5 * np.sum(W * Kf * D[:, :, d] / ls[d] ** 2)
    grad[dim] = 0.5 * np.sum(W * Kf)
    grad[dim + 1] = 0.5 * nv * np.trace(W)
    return float(lml), grad


def fit(X, y, restarts: int = 8, max_steps: int = 100, seed: int = 0) -> GPModel:
    """Fit hyper-parameters by maximising the log marginal likelihood.

    Multi-start L-BFGS-B on analytic gradients; the first start is a fixed
    default, the remaining ones are drawn from ``seed``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).reshape(-1)
    if len(X) == 0 or len(X) != len(y):
        raise ValueError("X and y must be non-empty and of equal length")
    X, y = _dedupe(X, y)
    dim = X.shape[1]
    std = float(np.std(y))
    ys = (y - np.mean(y)) / (std if std > 1e-12 else 1.0)
    D = _sq_dists(X)
    bounds = [_LOG_LS_BOUNDS] * dim + [_LOG_SV_BOUNDS, _LOG_NV_BOUNDS]

    def objective(theta):
        try:
            val, grad = _lml_and_grad(theta, X, ys, D)
        except np.linalg.LinAlgError:
            return 1e10, np.zeros_like(theta)
        return -val, -grad

    rng = np.random.default_rng(seed)
    starts = [np.concatenate([np.full(dim, math.log(0.5)), [0.0, math.log(1e-3)]])]
    for _ in range(max(restarts, 1) - 1):
        starts.append(np.concatenate([
            rng.uniform(math.log(0.1), math.log(3.0), dim),
            [rng.uniform(math.log(0.3), math.log(3.0)),
             rng.uniform(math.log(1e-5), math.log(1e-1))],
        ]))

    best_theta, best_val = None, np.inf
    for start in starts:
        res = minimize(objective, start, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": max_steps})
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    if best_theta is None:
        raise GPFitError("no restart produced a finite likelihood")
    return GPModel.build(X, y, np.exp(best_theta[:dim]), math.exp(best_theta[dim]),
                         math.exp(best_theta[dim + 1]))
