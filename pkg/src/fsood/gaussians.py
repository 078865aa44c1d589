"""Class-conditional Gaussian modeling of embedding clouds.

Maintains one fixed-capacity embedding queue per class, fits a Gaussian to
each queue (biased 1/N covariance), and samples the highest- and
lowest-density draws per class. The high-density draw stands in for a
prototypical class embedding; the low-density draw acts as a synthetic
outlier near that class's boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyIncoming,
    NotPositiveDefinite,
    TooFewSamples,
)
from .numerics import LOG_2PI, ClassGaussian, cholesky

# Ridge added to empirical covariances before factorization. Empirical
# covariance from N <= D samples is rank-deficient, so a floor is always
# applied; escalation multiplies it until the factorization succeeds.
RIDGE_FLOOR = 1e-6
RIDGE_TRACE_SCALE = 1e-4
RIDGE_ESCALATIONS = 6


@dataclass(frozen=True)
class EmbeddingQueue:
    """Fixed-capacity store of embeddings for one class."""

    class_id: int
    capacity: int
    entries: np.ndarray  # (k, D) with k <= capacity

    def __post_init__(self):
        if self.entries.ndim != 2:
            raise DimensionMismatch(f"queue entries must be (k, D), got {self.entries.shape}")
        if len(self.entries) > self.capacity:
            raise ValueError(
                f"queue holds {len(self.entries)} entries, capacity {self.capacity}"
            )


@dataclass(frozen=True)
class RegionSets:
    """Per-class extreme-likelihood draws.

    ``high[c]`` is the highest-density draw from class c's Gaussian (the
    semantic prototype region); ``low[c]`` the lowest-density draw (the
    outlier regularization region). Both are (C, D).
    """

    high: np.ndarray
    low: np.ndarray

    def __post_init__(self):
        if self.high.shape != self.low.shape or self.high.ndim != 2:
            raise DimensionMismatch(
                f"region arrays must share (C, D); got {self.high.shape} and {self.low.shape}"
            )

    @property
    def n_classes(self) -> int:
        return self.high.shape[0]


def bootstrap_queue(class_id, capacity, vectors, rng) -> EmbeddingQueue:
    """Fill a queue from a class's embedding pool, truncating at random.

    When the pool exceeds capacity, a uniform subset (without replacement)
    is kept, in original order.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) > capacity:
        keep = np.sort(rng.choice(len(vectors), size=capacity, replace=False))
        vectors = vectors[keep]
    return EmbeddingQueue(class_id=class_id, capacity=capacity, entries=vectors.copy())


def fit_class_gaussian(queue: EmbeddingQueue) -> ClassGaussian:
    """Fit mean and biased (1/N) covariance to the queue entries.

    The covariance gets a ridge of max(1e-6, 1e-4 * trace/D) on its
    diagonal before factorization; the ridge escalates tenfold a few times
    if factorization still fails, then NotPositiveDefinite propagates.
    """
    x = queue.entries
    n = len(x)
    if n < 2:
        raise TooFewSamples(f"class {queue.class_id}: need >= 2 entries, have {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    dim = x.shape[1]
    ridge = max(RIDGE_FLOOR, RIDGE_TRACE_SCALE * float(np.trace(cov)) / dim)
    for attempt in range(RIDGE_ESCALATIONS + 1):
        try:
            chol = cholesky(cov + ridge * np.eye(dim))
            break
        except NotPositiveDefinite:
            if attempt == RIDGE_ESCALATIONS:
                raise
            ridge *= 10.0
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return ClassGaussian(mean=mean, cov=cov, chol=chol, logdet=logdet)


def refresh_queue(queue, incoming, fraction, rng) -> EmbeddingQueue:
    """Overwrite floor(fraction * capacity) random slots with incoming entries.

    Slots are chosen uniformly without replacement; each chosen slot gets a
    uniformly chosen incoming vector (with replacement, so a small incoming
    pool is fine). Returns a new queue; the input is untouched.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"replacement fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return replace(queue, entries=queue.entries.copy())
    incoming = np.asarray(incoming, dtype=np.float64)
    if incoming.size == 0:
        raise EmptyIncoming(f"class {queue.class_id}: refresh with fraction {fraction} needs incoming vectors")
    if incoming.ndim != 2 or incoming.shape[1] != queue.entries.shape[1]:
        raise DimensionMismatch(
            f"incoming shape {incoming.shape} does not match queue dim {queue.entries.shape[1]}"
        )
    n_replace = min(int(fraction * queue.capacity), len(queue.entries))
    entries = queue.entries.copy()
    if n_replace > 0:
        slots = rng.choice(len(entries), size=n_replace, replace=False)
        picks = rng.integers(0, len(incoming), size=n_replace)
        entries[slots] = incoming[picks]
    return replace(queue, entries=entries)


def sample_likelihood_extremes(g, n, rng, return_draws=False):
    """Draw n samples and keep the highest- and lowest-density ones.

    Draws are mean + L z with the same factor L that defines the density,
    so the log-density of draw i is exactly
    -0.5 * (D log(2 pi) + logdet + ||z_i||^2): the extremes reduce to the
    min- and max-norm z rows and no triangular solves are needed. The
    consumed generator stream is identical to :func:`sample_mvn_batch`.

    Ties break toward the lowest draw index. With ``return_draws`` the
    materialized draws and their log-densities come back too (test
    introspection); only the two winning rows are transformed otherwise.

    Returns:
        (high, low) vectors, or (high, low, draws, logpdfs).
    """
    if n < 1:
        raise ValueError(f"need at least one draw, got {n}")
    z = rng.standard_normal((int(n), g.dim))
    quad = np.einsum("ij,ij->i", z, z)
    hi = int(np.argmin(quad))
    lo = int(np.argmax(quad))
    if return_draws:
        draws = g.mean + z @ g.chol.T
        logpdfs = -0.5 * (g.dim * LOG_2PI + g.logdet + quad)
        return draws[hi], draws[lo], draws, logpdfs
    return g.mean + g.chol @ z[hi], g.mean + g.chol @ z[lo]


def build_region_sets(gaussians, n, rng) -> RegionSets:
    """Sample extremes for every class in order; one rng stream throughout."""
    if len(gaussians) < 1:
        raise ValueError("need at least one class gaussian")
    highs = []
    lows = []
    for g in gaussians:
        high, low = sample_likelihood_extremes(g, n, rng)
        highs.append(high)
        lows.append(low)
    return RegionSets(high=np.array(highs), low=np.array(lows))
