"""Learnable ID and OOD context vectors and their similarity queries.

A ContextBank holds one context row per ID class plus a block of negative
(OOD) rows that anchor unknown semantics. Every downstream quantity --
class probabilities, OOD-row probabilities, detection scores -- is a
function of cosine similarities against these rows, so rows live as free
D-dimensional vectors with no norm constraint.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    NonPositiveTemperature,
    NoOodContext,
    TruncatedFile,
    ZeroVector,
)
from .numerics import softmax

MODEL_MAGIC = b"LSA1"


@dataclass
class ContextBank:
    """ID context rows (C, D), OOD context rows (M, D), softmax temperature.

    M = 0 is legal and switches the pipeline into its no-OOD-context mode;
    operations that need negative rows raise NoOodContext then.
    """

    id_contexts: np.ndarray
    ood_contexts: np.ndarray
    temperature: float

    def __post_init__(self):
        self.id_contexts = np.asarray(self.id_contexts, dtype=np.float64)
        self.ood_contexts = np.asarray(self.ood_contexts, dtype=np.float64)
        if self.id_contexts.ndim != 2 or self.id_contexts.shape[0] < 1:
            raise DimensionMismatch("id_contexts must be (C, D) with C >= 1")
        if self.ood_contexts.ndim != 2:
            raise DimensionMismatch("ood_contexts must be (M, D); use shape (0, D) for M = 0")
        if self.ood_contexts.shape[1] != self.id_contexts.shape[1]:
            raise DimensionMismatch("id and ood context rows must share D")
        if self.temperature <= 0:
            raise NonPositiveTemperature(f"temperature must be > 0, got {self.temperature}")
        rows = np.vstack([self.id_contexts, self.ood_contexts])
        if np.any(np.linalg.norm(rows, axis=1) == 0.0):
            raise ZeroVector("context rows must be nonzero (cosine undefined)")

    @property
    def n_classes(self) -> int:
        return self.id_contexts.shape[0]

    @property
    def n_ood(self) -> int:
        return self.ood_contexts.shape[0]

    @property
    def dim(self) -> int:
        return self.id_contexts.shape[1]

    def copy(self) -> "ContextBank":
        return ContextBank(
            id_contexts=self.id_contexts.copy(),
            ood_contexts=self.ood_contexts.copy(),
            temperature=self.temperature,
        )


def _check_vector(v, dim) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (dim,):
        raise DimensionMismatch(f"vector shape {v.shape} does not match context dim {dim}")
    if np.linalg.norm(v) == 0.0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return v


def similarity_matrix(vectors: np.ndarray, bank: ContextBank) -> np.ndarray:
    """Cosines of each row of ``vectors`` against every context row.

    Returns (n, C+M) with ID columns first. Raises ZeroVector naming the
    first offending sample index.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if vectors.shape[1] != bank.dim:
        raise DimensionMismatch(f"vectors have dim {vectors.shape[1]}, bank has {bank.dim}")
    vnorms = np.linalg.norm(vectors, axis=1)
    zero = np.nonzero(vnorms == 0.0)[0]
    if zero.size:
        raise ZeroVector(f"sample {zero[0]} is a zero vector")
    rows = np.vstack([bank.id_contexts, bank.ood_contexts])
    rnorms = np.linalg.norm(rows, axis=1)
    sims = (vectors @ rows.T) / np.outer(vnorms, rnorms)
    return np.clip(sims, -1.0, 1.0)


def similarities(v, bank: ContextBank) -> np.ndarray:
    """Cosines of one vector against all C+M context rows, ID rows first."""
    v = _check_vector(v, bank.dim)
    return similarity_matrix(v[None, :], bank)[0]


def predict_probs(v, bank: ContextBank) -> np.ndarray:
    """Softmax over all C+M cosines at the bank temperature."""
    return softmax(similarities(v, bank), bank.temperature)


def ood_probs(v, bank: ContextBank) -> np.ndarray:
    """Softmax over the M OOD cosines only; independent of the ID rows."""
    if bank.n_ood == 0:
        raise NoOodContext("bank has no OOD context rows")
    return softmax(similarities(v, bank)[bank.n_classes :], bank.temperature)


def classify(v, bank: ContextBank) -> int:
    """Argmax over the ID cosines; ties resolve to the lowest index."""
    return int(np.argmax(similarities(v, bank)[: bank.n_classes]))


def classify_batch(vectors, bank: ContextBank) -> np.ndarray:
    return np.argmax(similarity_matrix(vectors, bank)[:, : bank.n_classes], axis=1)


def init_context_bank(class_means, n_ood, temperature, rng, warm_start=True) -> ContextBank:
    """Initial bank: unit-normalized class means (or random rows) for the ID
    block, seeded unit-normalized random rows for the OOD block."""
    class_means = np.asarray(class_means, dtype=np.float64)
    n_classes, dim = class_means.shape
    if warm_start:
        id_rows = class_means / np.linalg.norm(class_means, axis=1, keepdims=True)
    else:
        id_rows = rng.standard_normal((n_classes, dim))
        id_rows /= np.linalg.norm(id_rows, axis=1, keepdims=True)
    ood_rows = rng.standard_normal((int(n_ood), dim))
    if n_ood:
        ood_rows /= np.linalg.norm(ood_rows, axis=1, keepdims=True)
    return ContextBank(id_contexts=id_rows, ood_contexts=ood_rows, temperature=temperature)


# Model file layout (little-endian throughout):
#   magic "LSA1" | u32 C | u32 M | u32 D | f64 temperature
#   | C*D f64 id rows (row-major) | M*D f64 ood rows (row-major)
_HEADER = struct.Struct("<4sIIId")


def save_context_bank(bank: ContextBank, path) -> None:
    payload = _HEADER.pack(MODEL_MAGIC, bank.n_classes, bank.n_ood, bank.dim, bank.temperature)
    blob = payload + bank.id_contexts.astype("<f8").tobytes() + bank.ood_contexts.astype("<f8").tobytes()
    Path(path).write_bytes(blob)


def load_context_bank(path) -> ContextBank:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedFile(f"model file ends at byte {len(blob)}, header needs {_HEADER.size}")
    magic, n_classes, n_ood, dim, temperature = _HEADER.unpack_from(blob)
    if magic != MODEL_MAGIC:
        raise BadMagic(f"expected {MODEL_MAGIC!r}, found {magic!r}")
    expected = _HEADER.size + 8 * dim * (n_classes + n_ood)
    if len(blob) != expected:
        raise TruncatedFile(f"model file has {len(blob)} bytes, expected {expected}")
    flat = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size).copy()
    id_rows = flat[: n_classes * dim].reshape(n_classes, dim)
    ood_rows = flat[n_classes * dim :].reshape(n_ood, dim)
    return ContextBank(id_contexts=id_rows, ood_contexts=ood_rows, temperature=temperature)
