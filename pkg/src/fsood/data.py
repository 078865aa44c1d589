"""Embedding file format, dataset manifests, and the synthetic benchmark.

EMB1 binary layout (little-endian throughout):

    magic "EMB1" | u16 version (=1) | u32 dim | u64 count
    | u8 precision (0 = f32, 1 = f64) | u32 locals_per_sample
    then per sample:
    i32 label | dim floats (global) | locals_per_sample * dim floats

Labels are -1 for unlabeled OOD samples. Vectors are widened to float64 on
load; the declared precision is kept on the dataset so a write -> read ->
write round trip is byte-identical.

A manifest is a key=value text file mapping split roles to EMB1 paths.
Valid roles: id_train, id_test, csid:<name>, near_ood:<name>,
far_ood:<name>. Paths are resolved relative to the manifest file.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadMagic, ConfigInvalid, DimensionMismatch, TruncatedFile
from .numerics import make_rng

EMB_MAGIC = b"EMB1"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<4sHIQBI")
_PRECISIONS = {"f32": 0, "f64": 1}
_PRECISION_DTYPES = {"f32": "<f4", "f64": "<f8"}


@dataclass
class EmbeddingSet:
    """In-memory embeddings: (n, D) float64 vectors, i32 labels, optional
    (n, L, D) local embeddings, plus the file precision they carry."""

    vectors: np.ndarray
    labels: np.ndarray
    locals: np.ndarray | None = None
    precision: str = "f64"

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.vectors.ndim != 2:
            raise DimensionMismatch(f"vectors must be (n, D), got {self.vectors.shape}")
        if self.labels.shape != (len(self.vectors),):
            raise DimensionMismatch("labels must be one per vector")
        if self.locals is not None:
            self.locals = np.asarray(self.locals, dtype=np.float64)
            if self.locals.ndim != 3 or self.locals.shape[::2] != (
                len(self.vectors),
                self.vectors.shape[1],
            ):
                raise DimensionMismatch(
                    f"locals must be (n, L, D) matching vectors, got {self.locals.shape}"
                )
        if self.precision not in _PRECISIONS:
            raise ConfigInvalid(f"precision must be one of {sorted(_PRECISIONS)}")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def locals_per_sample(self) -> int:
        return 0 if self.locals is None else self.locals.shape[1]


def write_emb(path, dataset: EmbeddingSet) -> None:
    """Write at the dataset's declared precision; deterministic bytes."""
    n, dim = dataset.vectors.shape
    n_locals = dataset.locals_per_sample
    header = _EMB_HEADER.pack(
        EMB_MAGIC, EMB_VERSION, dim, n, _PRECISIONS[dataset.precision], n_locals
    )
    fdtype = _PRECISION_DTYPES[dataset.precision]
    parts = [header]
    for i in range(n):
        parts.append(struct.pack("<i", int(dataset.labels[i])))
        parts.append(dataset.vectors[i].astype(fdtype).tobytes())
        if n_locals:
            parts.append(dataset.locals[i].astype(fdtype).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_emb(path) -> EmbeddingSet:
    """Read and validate an EMB1 file; f32 payloads widen to f64."""
    blob = Path(path).read_bytes()
    if len(blob) < 4:
        raise TruncatedFile(f"{path}: file ends at byte {len(blob)}, header needs {_EMB_HEADER.size}")
    if blob[:4] != EMB_MAGIC:
        raise BadMagic(f"{path}: expected {EMB_MAGIC!r}, found {blob[:4]!r}")
    if len(blob) < _EMB_HEADER.size:
        raise TruncatedFile(f"{path}: file ends at byte {len(blob)}, header needs {_EMB_HEADER.size}")
    magic, version, dim, count, prec_flag, n_locals = _EMB_HEADER.unpack_from(blob)
    if version != EMB_VERSION:
        raise ConfigInvalid(f"{path}: unsupported EMB version {version}")
    by_flag = {v: k for k, v in _PRECISIONS.items()}
    if prec_flag not in by_flag:
        raise ConfigInvalid(f"{path}: unknown precision flag {prec_flag}")
    precision = by_flag[prec_flag]
    float_bytes = 4 if precision == "f32" else 8
    record = 4 + float_bytes * dim * (1 + n_locals)
    expected = _EMB_HEADER.size + record * count
    if len(blob) != expected:
        raise TruncatedFile(
            f"{path}: payload ends at byte {len(blob)}, header declares {expected} "
            f"({count} records of {record} bytes)"
        )
    fields = [("label", "<i4"), ("vec", _PRECISION_DTYPES[precision], (dim,))]
    if n_locals:
        fields.append(("locals", _PRECISION_DTYPES[precision], (n_locals, dim)))
    records = np.frombuffer(blob, dtype=np.dtype(fields), count=count, offset=_EMB_HEADER.size)
    return EmbeddingSet(
        vectors=records["vec"].astype(np.float64),
        labels=records["label"].copy(),
        locals=records["locals"].astype(np.float64) if n_locals else None,
        precision=precision,
    )


ROLE_ID_TRAIN = "id_train"
ROLE_ID_TEST = "id_test"
_ROLE_PREFIXES = ("csid:", "near_ood:", "far_ood:")


def _valid_role(role: str) -> bool:
    if role in (ROLE_ID_TRAIN, ROLE_ID_TEST):
        return True
    return any(role.startswith(p) and len(role) > len(p) for p in _ROLE_PREFIXES)


@dataclass
class Manifest:
    """Ordered mapping of split roles to EMB1 paths (absolute after read)."""

    entries: dict = field(default_factory=dict)

    def __post_init__(self):
        for role in self.entries:
            if not _valid_role(role):
                raise ConfigInvalid(f"invalid manifest role {role!r}")
        if ROLE_ID_TRAIN not in self.entries:
            raise ConfigInvalid("manifest must contain an id_train entry")

    def roles(self, prefix: str):
        return [r for r in self.entries if r.startswith(prefix)]

    def path(self, role) -> Path:
        return Path(self.entries[role])


def read_manifest(path) -> Manifest:
    path = Path(path)
    entries = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{lineno}: expected role=path, got {line!r}")
        role, _, rel = line.partition("=")
        role = role.strip()
        entries[role] = (path.parent / rel.strip()).resolve()
    return Manifest(entries=entries)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    lines = []
    for role, target in manifest.entries.items():
        target = Path(target)
        try:
            rel = target.resolve().relative_to(path.parent.resolve())
        except ValueError:
            rel = target
        lines.append(f"{role}={rel}")
    path.write_text("\n".join(lines) + "\n")


@dataclass
class SynthConfig:
    """Synthetic full-spectrum world: C Gaussian ID classes on a sphere,
    jittered/rescaled csID copies, novel-class Near-OOD in the same
    covariance regime, and displaced + rescaled Far-OOD classes."""

    n_classes: int = 8
    dim: int = 32
    train_per_class: int = 500
    id_test_per_class: int = 100
    csid_per_class: int = 100
    near_per_class: int = 150
    far_per_class: int = 150
    mean_radius: float = 4.0
    within_scale: float = 1.0
    csid_cov_factor: float = 1.5
    csid_mean_jitter: float = 0.5
    near_classes: int = 4
    far_classes: int = 4
    far_cov_factor: float = 4.0
    far_mean_displacement: float = 2.0
    style_strength: float = 2.0
    csid_style_factor: float = 0.8
    far_style_factor: float = 0.6
    seed: int = 7

    def __post_init__(self):
        counts = (
            self.n_classes,
            self.dim,
            self.train_per_class,
            self.id_test_per_class,
            self.csid_per_class,
            self.near_per_class,
            self.far_per_class,
            self.near_classes,
            self.far_classes,
        )
        if any(c < 1 for c in counts):
            raise ConfigInvalid("all synthetic counts must be positive")
        factors = (
            self.mean_radius,
            self.within_scale,
            self.csid_cov_factor,
            self.far_cov_factor,
            self.far_mean_displacement,
        )
        if any(f <= 0 for f in factors):
            raise ConfigInvalid("all synthetic scale factors must be > 0")
        if self.csid_mean_jitter < 0:
            raise ConfigInvalid("csid_mean_jitter must be >= 0")
        if min(self.style_strength, self.csid_style_factor, self.far_style_factor) < 0:
            raise ConfigInvalid("style strength and factors must be >= 0")


@dataclass
class SynthWorld:
    """Generated datasets keyed by manifest role, plus the generating
    parameters (handy for geometric assertions)."""

    sets: dict
    id_means: np.ndarray
    csid_means: np.ndarray
    near_means: np.ndarray
    far_means: np.ndarray
    config: SynthConfig


def _unit_directions(rng, count, dim):
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _gaussian_cloud(rng, means, per_class, scale, labeled, offset=0.0):
    vectors = []
    labels = []
    for c, mean in enumerate(means):
        vectors.append(mean + offset + scale * rng.standard_normal((per_class, len(mean))))
        labels.append(np.full(per_class, c if labeled else -1, dtype=np.int32))
    return np.vstack(vectors), np.concatenate(labels)


def synth_world(cfg: SynthConfig) -> SynthWorld:
    """Generate the five splits; fully determined by cfg.seed.

    Semantics live in the class-mean directions; covariate structure lives
    in a shared style direction added to every sample (cosine scores are
    scale-invariant, so radial perturbations alone would be undetectable).
    Near-OOD classes interleave among the ID classes on the same sphere
    with the same covariance and full style (semantic novelty only);
    Far-OOD classes move to a larger radius with wider covariance and
    attenuated style (semantic plus covariate shift). csID keeps the ID
    semantics: the same class means up to a jitter of exactly
    ``csid_mean_jitter``, covariance scaled by ``csid_cov_factor``, and a
    mildly shifted style.
    """
    rng = make_rng(cfg.seed)
    style = cfg.style_strength * _unit_directions(rng, 1, cfg.dim)[0]
    id_means = cfg.mean_radius * _unit_directions(rng, cfg.n_classes, cfg.dim)
    csid_means = id_means + cfg.csid_mean_jitter * _unit_directions(rng, cfg.n_classes, cfg.dim)
    # near-OOD classes interleave among the ID classes: each novel mean sits
    # on the ID sphere along the (jittered) bisector of a random ID pair, so
    # near samples share the ID covariance regime and the ID span
    near_dirs = []
    for _ in range(cfg.near_classes):
        a, b = rng.choice(cfg.n_classes, size=2, replace=False)
        blend = id_means[a] + id_means[b] + 0.25 * cfg.mean_radius * rng.standard_normal(cfg.dim)
        near_dirs.append(blend / np.linalg.norm(blend))
    near_means = cfg.mean_radius * np.array(near_dirs)
    far_means = (
        cfg.mean_radius * cfg.far_mean_displacement * _unit_directions(rng, cfg.far_classes, cfg.dim)
    )

    sets = {}
    train_v, train_l = _gaussian_cloud(
        rng, id_means, cfg.train_per_class, cfg.within_scale, True, offset=style
    )
    sets[ROLE_ID_TRAIN] = EmbeddingSet(train_v, train_l)
    test_v, test_l = _gaussian_cloud(
        rng, id_means, cfg.id_test_per_class, cfg.within_scale, True, offset=style
    )
    sets[ROLE_ID_TEST] = EmbeddingSet(test_v, test_l)
    csid_scale = cfg.within_scale * np.sqrt(cfg.csid_cov_factor)
    csid_v, csid_l = _gaussian_cloud(
        rng, csid_means, cfg.csid_per_class, csid_scale, True,
        offset=cfg.csid_style_factor * style,
    )
    sets["csid:jitter"] = EmbeddingSet(csid_v, csid_l)
    near_v, near_l = _gaussian_cloud(
        rng, near_means, cfg.near_per_class, cfg.within_scale, False, offset=style
    )
    sets["near_ood:novel"] = EmbeddingSet(near_v, near_l)
    far_scale = cfg.within_scale * np.sqrt(cfg.far_cov_factor)
    far_v, far_l = _gaussian_cloud(
        rng, far_means, cfg.far_per_class, far_scale, False,
        offset=cfg.far_style_factor * style,
    )
    sets["far_ood:shifted"] = EmbeddingSet(far_v, far_l)

    return SynthWorld(
        sets=sets,
        id_means=id_means,
        csid_means=csid_means,
        near_means=near_means,
        far_means=far_means,
        config=cfg,
    )


def write_world(world: SynthWorld, out_dir, precision="f64", created=None) -> Path:
    """Write every split as EMB1 plus a manifest; returns the manifest path.

    Paths are appended to ``created`` (when given) before each write so a
    caller can clean up after a mid-way failure.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = {}
    for role, dataset in world.sets.items():
        fname = role.replace(":", "_") + ".emb"
        dataset.precision = precision
        if created is not None:
            created.append(out_dir / fname)
        write_emb(out_dir / fname, dataset)
        entries[role] = out_dir / fname
    manifest = Manifest(entries=entries)
    manifest_path = out_dir / "manifest.txt"
    if created is not None:
        created.append(manifest_path)
    write_manifest(manifest, manifest_path)
    return manifest_path
