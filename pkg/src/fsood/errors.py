"""Exception types shared across the package.

Each class corresponds to one contract violation; callers catch these to
surface precise failure messages (the CLI maps them to exit codes).
"""


class FsoodError(Exception):
    """Base class for all package-specific errors."""


class NotPositiveDefinite(FsoodError):
    """Cholesky factorization hit a non-positive pivot."""


class DimensionMismatch(FsoodError):
    """Operands disagree on the embedding dimension or shape."""


class EmptyInput(FsoodError):
    """An operation that needs at least one element got none."""


class NonPositiveTemperature(FsoodError):
    """Softmax temperature must be strictly positive."""


class ZeroVector(FsoodError):
    """Cosine similarity is undefined for a zero vector."""


class TooFewSamples(FsoodError):
    """Gaussian fitting needs at least two samples."""


class EmptyIncoming(FsoodError):
    """Queue refresh with a positive fraction needs incoming vectors."""


class NoOodContext(FsoodError):
    """The operation requires at least one OOD context row (M >= 1)."""


class SExceedsC(FsoodError):
    """Half the batch size exceeds the number of classes."""


class NoLocalEmbeddings(FsoodError):
    """mcm_gl needs per-sample local (patch) embeddings."""


class EmptyScores(FsoodError):
    """Detection metrics need nonempty ID and OOD score arrays."""


class LabelOutOfRange(FsoodError):
    """A class label falls outside [0, C)."""


class BadMagic(FsoodError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(FsoodError):
    """File ends before the declared payload; message carries the offset."""


class ConfigInvalid(FsoodError):
    """A configuration value violates its documented constraint."""
