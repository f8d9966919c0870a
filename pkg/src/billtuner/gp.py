"""Gaussian process posteriors for the surrogate models of the tuner.

Zero-mean prior with a stationary kernel (Matern 5/2 by default, squared
exponential available); posterior mean and variance come from triangular
solves against the Cholesky factor of K + lambda*I:

    mean(x)  = k(X, x)' (K + lambda I)^-1 y
    var(x)   = k(x, x) - k(X, x)' (K + lambda I)^-1 k(X, x)

Inputs are expected in the unit box (the tuner normalizes); observations
enter as given (any standardization is the caller's business so these
formulas stay exact).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CholeskyFailure, NegativeVariance

_NEG_VAR_TOL = 1e-10
_JITTER_RETRIES = 3


@dataclass(frozen=True)
class Kernel:
    kind: str = "matern52"  # or "se"
    lengthscales: np.ndarray = field(default_factory=lambda: np.array([0.2]))
    variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(
            self, "lengthscales", np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        )
        if self.kind not in ("matern52", "se"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if np.any(self.lengthscales <= 0):
            raise ValueError("lengthscales must be strictly positive")
        if self.variance <= 0:
            raise ValueError("variance must be strictly positive")

    def __call__(self, xa: np.ndarray, xb: np.ndarray) -> np.ndarray:
        """Cross-covariance matrix between row sets ``xa`` (n,d) and ``xb`` (m,d)."""
        xa = np.atleast_2d(np.asarray(xa, dtype=float))
        xb = np.atleast_2d(np.asarray(xb, dtype=float))
        ls = np.broadcast_to(self.lengthscales, (xa.shape[1],))
        diff = (xa[:, None, :] - xb[None, :, :]) / ls
        r = np.sqrt(np.maximum(np.sum(diff * diff, axis=-1), 0.0))
        if self.kind == "se":
            return self.variance * np.exp(-0.5 * r * r)
        s = np.sqrt(5.0) * r
        return self.variance * (1.0 + s + s * s / 3.0) * np.exp(-s)


def default_kernel(dim: int, lengthscale: float = 0.2) -> Kernel:
    return Kernel(kind="matern52", lengthscales=np.full(dim, lengthscale), variance=1.0)


@dataclass(frozen=True)
class GpPosterior:
    kernel: Kernel
    train_x: np.ndarray
    train_y: np.ndarray
    noise_var: float
    chol: np.ndarray
    alpha: np.ndarray  # (K + lambda I)^-1 y, precomputed

    @property
    def n_train(self) -> int:
        return len(self.train_y)


def fit(x: np.ndarray, y: np.ndarray, kernel: Kernel, noise_var: float) -> GpPosterior:
    """Fit the posterior; retries the Cholesky with 10x jitter up to 3 times."""
    if noise_var <= 0:
        raise ValueError("noise_var must be strictly positive")
    x = np.atleast_2d(np.asarray(x, dtype=float)) if np.size(x) else np.zeros((0, 1))
    y = np.asarray(y, dtype=float).reshape(-1)
    if x.shape[0] != len(y):
        raise ValueError("x and y lengths differ")

    n = len(y)
    if n == 0:
        return GpPosterior(
            kernel=kernel,
            train_x=x,
            train_y=y,
            noise_var=noise_var,
            chol=np.zeros((0, 0)),
            alpha=np.zeros(0),
        )
    k_mat = kernel(x, x)
    jitter = noise_var
    for attempt in range(_JITTER_RETRIES + 1):
        try:
            chol = np.linalg.cholesky(k_mat + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter *= 10.0
    else:
        raise CholeskyFailure("covariance not positive definite after jitter retries")
    z = np.linalg.solve(chol, y)
    alpha = np.linalg.solve(chol.T, z)
    return GpPosterior(
        kernel=kernel, train_x=x, train_y=y, noise_var=noise_var, chol=chol, alpha=alpha
    )


def posterior_batch(gp: GpPosterior, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mean, variance) arrays at a batch of query points (m,d)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    prior_var = gp.kernel(points[:1], points[:1])[0, 0]
    if gp.n_train == 0:
        return np.zeros(len(points)), np.full(len(points), prior_var)
    k_star = gp.kernel(gp.train_x, points)  # (n_train, m)
    mean = k_star.T @ gp.alpha
    v = np.linalg.solve(gp.chol, k_star)
    var = prior_var - np.sum(v * v, axis=0)
    bad = var < -_NEG_VAR_TOL
    if np.any(bad):
        raise NegativeVariance(f"posterior variance {var[bad].min()} below -{_NEG_VAR_TOL}")
    return mean, np.maximum(var, 0.0)


def posterior_at(gp: GpPosterior, theta: np.ndarray) -> tuple[float, float]:
    """Posterior (mean, variance) at a single point."""
    mean, var = posterior_batch(gp, np.atleast_2d(theta))
    return float(mean[0]), float(var[0])


def lcb(gp: GpPosterior, theta: np.ndarray, beta_sqrt: float) -> float:
    """Lower confidence bound mean - beta_sqrt * sigma."""
    if beta_sqrt < 0:
        raise ValueError("beta_sqrt must be non-negative")
    mean, var = posterior_at(gp, theta)
    return mean - beta_sqrt * np.sqrt(var)


def lcb_batch(gp: GpPosterior, points: np.ndarray, beta_sqrt: float) -> np.ndarray:
    if beta_sqrt < 0:
        raise ValueError("beta_sqrt must be non-negative")
    mean, var = posterior_batch(gp, points)
    return mean - beta_sqrt * np.sqrt(var)
