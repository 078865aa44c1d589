"""Test-time detection scores. Higher always means more ID-like.

Four families: the plain ID-energy baseline, the energy difference
(ID energy minus negative-context energy), maximum cosine against the ID
contexts, and the global+local variant that adds the best patch cosine.
Energies use their own temperature (default 1), independent of the
training temperature.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .contexts import ContextBank, similarity_matrix
from .errors import EmptyInput, NoLocalEmbeddings, NoOodContext
from .numerics import logsumexp, softmax

SCORE_TAGS = ("energy_id", "d_energy", "mcm", "mcm_gl")


@dataclass(frozen=True)
class ScoreKind:
    """Score-family selector.

    ``softmax_mcm`` switches mcm/mcm_gl from raw max-cosine to the max of
    the temperature softmax over ID cosines; kept off by default.
    """

    tag: str
    t_score: float = 1.0
    softmax_mcm: bool = False

    def __post_init__(self):
        if self.tag not in SCORE_TAGS:
            raise ValueError(f"unknown score kind {self.tag!r}; choose from {SCORE_TAGS}")
        if self.t_score <= 0:
            raise ValueError("t_score must be > 0")


@dataclass(frozen=True)
class ScoredSample:
    sample_id: int
    split: str
    score: float


def energy_id(id_sims, t_score=1.0) -> float:
    """T * logsumexp(s / T) over the C ID cosines."""
    id_sims = np.asarray(id_sims, dtype=np.float64)
    if id_sims.size == 0:
        raise EmptyInput("energy of an empty similarity array")
    return t_score * logsumexp(id_sims / t_score)


def energy_ood(ood_sims, t_score=1.0) -> float:
    """Same energy over the M negative-context cosines."""
    ood_sims = np.asarray(ood_sims, dtype=np.float64)
    if ood_sims.size == 0:
        raise EmptyInput("energy of an empty similarity array")
    return t_score * logsumexp(ood_sims / t_score)


def d_energy(v, bank: ContextBank, t_score=1.0) -> float:
    """ID energy minus negative-context energy of one embedding."""
    if bank.n_ood == 0:
        raise NoOodContext("d_energy needs at least one OOD context row")
    sims = similarity_matrix(v, bank)[0]
    c = bank.n_classes
    return energy_id(sims[:c], t_score) - energy_ood(sims[c:], t_score)


def mcm(v, bank: ContextBank, softmax_variant=False) -> float:
    """Maximum cosine against the ID contexts (raw cosine by default)."""
    sims = similarity_matrix(v, bank)[0][: bank.n_classes]
    if softmax_variant:
        return float(softmax(sims, bank.temperature).max())
    return float(sims.max())


def mcm_gl(v, local_vectors, bank: ContextBank, softmax_variant=False) -> float:
    """mcm plus the best cosine of any local (patch) embedding against any
    ID context row."""
    local_vectors = np.asarray(local_vectors, dtype=np.float64)
    if local_vectors.ndim != 2 or len(local_vectors) == 0:
        raise NoLocalEmbeddings("mcm_gl needs a nonempty (L, D) local embedding array")
    local_sims = similarity_matrix(local_vectors, bank)[:, : bank.n_classes]
    if softmax_variant:
        local_term = float(
            max(softmax(row, bank.temperature).max() for row in local_sims)
        )
    else:
        local_term = float(local_sims.max())
    return mcm(v, bank, softmax_variant) + local_term


def _scores_matrixwise(vectors, bank, kind):
    sims = similarity_matrix(vectors, bank)
    c = bank.n_classes
    t = kind.t_score
    if kind.tag in ("energy_id", "d_energy"):
        shifted = sims[:, :c] / t
        m = shifted.max(axis=1)
        e_id = t * (m + np.log(np.exp(shifted - m[:, None]).sum(axis=1)))
        if kind.tag == "energy_id":
            return e_id
        if bank.n_ood == 0:
            raise NoOodContext("d_energy needs at least one OOD context row")
        shifted = sims[:, c:] / t
        m = shifted.max(axis=1)
        e_ood = t * (m + np.log(np.exp(shifted - m[:, None]).sum(axis=1)))
        return e_id - e_ood
    if kind.softmax_mcm:
        logits = sims[:, :c] / bank.temperature
        probs = np.exp(logits - logits.max(axis=1, keepdims=True))
        probs /= probs.sum(axis=1, keepdims=True)
        return probs.max(axis=1)
    return sims[:, :c].max(axis=1)


def score_dataset(vectors, bank, kind: ScoreKind, split, local_vectors=None):
    """Score every row of ``vectors``; pure, order-preserving.

    ``local_vectors`` is the (n, L, D) per-sample patch array required by
    mcm_gl. Errors carry the offending sample id.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if len(vectors) == 0:
        return []
    if kind.tag == "mcm_gl":
        if local_vectors is None or np.size(local_vectors) == 0:
            raise NoLocalEmbeddings(f"split {split!r} has no local embeddings for mcm_gl")
        scores = []
        for i, v in enumerate(vectors):
            try:
                scores.append(mcm_gl(v, local_vectors[i], bank, kind.softmax_mcm))
            except NoLocalEmbeddings:
                raise NoLocalEmbeddings(f"sample {i} of split {split!r} has no locals") from None
    else:
        scores = _scores_matrixwise(vectors, bank, kind)
    return [
        ScoredSample(sample_id=i, split=split, score=float(s)) for i, s in enumerate(scores)
    ]
