"""Numerically stable linear-algebra and probability kernels.

All functions are pure, work in float64, and are safe to share across
threads. Randomness comes exclusively from ``numpy.random.Generator``
objects created by :func:`make_rng`; a fixed seed plus a fixed call
sequence reproduces the same stream bit for bit (PCG64 state, ziggurat
normal sampling as implemented by ``Generator.standard_normal``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    DimensionMismatch,
    EmptyInput,
    NonPositiveTemperature,
    NotPositiveDefinite,
    ZeroVector,
)

LOG_2PI = float(np.log(2.0 * np.pi))

# Relative tolerance for the symmetry precondition of SPD inputs.
SYMMETRY_RTOL = 1e-9


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the single source of randomness in this package."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def cholesky(m: np.ndarray) -> np.ndarray:
    """Lower-triangular L with L @ L.T == m.

    Args:
        m: symmetric positive-definite (D, D) array.

    Returns:
        Lower-triangular factor with positive diagonal.

    Raises:
        DimensionMismatch: if ``m`` is not square.
        ValueError: if ``m`` is asymmetric beyond 1e-9 relative.
        NotPositiveDefinite: if factorization hits a non-positive pivot;
            callers respond by increasing their ridge term.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    scale = np.abs(m).max()
    if scale > 0 and np.abs(m - m.T).max() > SYMMETRY_RTOL * scale:
        raise ValueError("matrix is not symmetric to within 1e-9 relative")
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None


@dataclass(frozen=True)
class ClassGaussian:
    """Moments of one class-conditional Gaussian plus its factored form.

    ``chol`` factors the *regularized* covariance (cov + ridge * I), so
    ``chol @ chol.T`` may differ from ``cov`` by the ridge used at fit
    time. ``logdet`` is the log-determinant of that regularized matrix,
    i.e. ``2 * sum(log(diag(chol)))``.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray
    logdet: float

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def from_moments(cls, mean, cov) -> "ClassGaussian":
        """Build from (mean, cov) with no ridge; cov must already be SPD."""
        mean = np.asarray(mean, dtype=np.float64)
        cov = np.asarray(cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise DimensionMismatch(
                f"mean shape {mean.shape} does not match cov shape {cov.shape}"
            )
        chol = cholesky(cov)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        return cls(mean=mean, cov=cov, chol=chol, logdet=logdet)


def mvn_logpdf(x: np.ndarray, g: ClassGaussian) -> float:
    """Gaussian log-density at ``x`` via triangular solves on the stored factor.

    Returns -0.5 * (D*log(2*pi) + logdet + (x-mean)' Sigma^{-1} (x-mean)).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != g.mean.shape:
        raise DimensionMismatch(f"x has shape {x.shape}, gaussian has dim {g.dim}")
    y = solve_triangular(g.chol, x - g.mean, lower=True)
    return -0.5 * (g.dim * LOG_2PI + g.logdet + float(y @ y))


def mvn_logpdf_batch(xs: np.ndarray, g: ClassGaussian) -> np.ndarray:
    """Row-wise :func:`mvn_logpdf` for an (n, D) array; identical values."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != g.dim:
        raise DimensionMismatch(f"xs has shape {xs.shape}, gaussian has dim {g.dim}")
    ys = solve_triangular(g.chol, (xs - g.mean).T, lower=True)
    quad = np.einsum("ij,ij->j", ys, ys)
    return -0.5 * (g.dim * LOG_2PI + g.logdet + quad)


def logsumexp(v: np.ndarray) -> float:
    """Max-shifted log(sum(exp(v))); exact for all-equal inputs."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise EmptyInput("logsumexp of an empty array")
    m = float(v.max())
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(v - m))))


def softmax(v: np.ndarray, temperature: float) -> np.ndarray:
    """Temperature softmax computed through :func:`logsumexp`.

    Entries are positive and sum to one to machine accuracy.
    """
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be > 0, got {temperature}")
    z = np.asarray(v, dtype=np.float64) / temperature
    return np.exp(z - logsumexp(z))


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity clamped to [-1, 1]; rejects zero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"shapes {u.shape} and {v.shape} differ")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.clip(float(u @ v) / (nu * nv), -1.0, 1.0))


def sample_mvn(g: ClassGaussian, rng: np.random.Generator) -> np.ndarray:
    """One draw mean + L @ z with z i.i.d. standard normal from ``rng``."""
    return g.mean + g.chol @ rng.standard_normal(g.dim)


def sample_mvn_batch(g: ClassGaussian, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws as rows of an (n, D) array.

    Consumes the generator stream in the same order as ``n`` sequential
    :func:`sample_mvn` calls (standard_normal fills row-major). Values may
    differ from looped calls in the last ulp (BLAS accumulation order);
    every consumer in this package uses the batched path, so seeded runs
    stay bit-stable.
    """
    z = rng.standard_normal((int(n), g.dim))
    return g.mean + z @ g.chol.T
