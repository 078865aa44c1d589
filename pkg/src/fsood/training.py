"""Context-vector optimization.

Builds mixed batches (few-shot image embeddings, per-class high-density
regions with their class labels, per-class low-density regions with random
negative labels), computes three losses with hand-derived gradients, and
runs seeded SGD with momentum and a per-epoch cosine learning-rate decay.

Gradient conventions: region vectors and image embeddings are constants;
gradients flow only into the context rows, through the cosine
normalization of both arguments. For a row t with norm r and a unit input
vhat, d cos / d t = (vhat - cos * t / r) / r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .contexts import ContextBank, init_context_bank
from .errors import (
    ConfigInvalid,
    EmptyInput,
    NoOodContext,
    SExceedsC,
    ZeroVector,
)
from .gaussians import (
    RegionSets,
    bootstrap_queue,
    build_region_sets,
    fit_class_gaussian,
    refresh_queue,
)
from .numerics import make_rng

_SUBSTITUTE_TARGETS = ("ce", "uni", "bin")


@dataclass
class TrainConfig:
    """Hyperparameters and ablation switches for one training run.

    Defaults follow the reference recipe: SGD momentum 0.9, weight decay
    5e-4, initial lr 0.004 with cosine decay over 100 epochs, batch 64,
    16-shot pools, 500-deep queues, 20000 Gaussian draws per resample,
    15 negative contexts, temperature 0.01.
    """

    uni_weight: float = 0.5
    bin_weight: float = 0.1
    learning_rate: float = 0.004
    epochs: int = 100
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 64
    few_shot: int = 16
    refresh_fraction: float = 0.1
    gaussian_samples: int = 20000
    queue_capacity: int = 500
    ood_contexts: int = 15
    temperature: float = 0.01
    seed: int = 0
    warm_start: bool = True
    disable_uni: bool = False
    disable_bin: bool = False
    no_ood_context: bool = False
    global_substitute: tuple = ()
    outlier_path: str | None = None

    def __post_init__(self):
        if self.uni_weight < 0 or self.bin_weight < 0:
            raise ConfigInvalid("loss weights must be >= 0")
        if self.batch_size <= 0 or self.batch_size % 2 != 0:
            raise ConfigInvalid(f"batch_size must be positive and even, got {self.batch_size}")
        if not 0.0 <= self.refresh_fraction <= 1.0:
            raise ConfigInvalid("refresh_fraction must lie in [0, 1]")
        if self.few_shot < 1 or self.gaussian_samples < 1 or self.queue_capacity < 2:
            raise ConfigInvalid("few_shot, gaussian_samples >= 1 and queue_capacity >= 2 required")
        if self.temperature <= 0:
            raise ConfigInvalid("temperature must be > 0")
        if self.learning_rate <= 0 or self.epochs < 0:
            raise ConfigInvalid("learning_rate must be > 0 and epochs >= 0")
        if not 0.0 <= self.momentum < 1.0 or self.weight_decay < 0:
            raise ConfigInvalid("momentum in [0, 1) and weight_decay >= 0 required")
        bad = set(self.global_substitute) - set(_SUBSTITUTE_TARGETS)
        if bad:
            raise ConfigInvalid(f"unknown global_substitute targets: {sorted(bad)}")
        if self.no_ood_context:
            if self.ood_contexts != 0:
                raise ConfigInvalid("no_ood_context mode requires ood_contexts = 0")
        elif self.ood_contexts < 1:
            raise ConfigInvalid("ood_contexts must be >= 1 (or use no_ood_context)")


@dataclass(frozen=True)
class TrainBatch:
    """Embeddings with labels in [0, C+M): image and high-region items carry
    class labels; low-region items carry negative-context labels."""

    vectors: np.ndarray
    labels: np.ndarray


@dataclass
class Grads:
    """Loss gradient with respect to both context blocks."""

    id_contexts: np.ndarray
    ood_contexts: np.ndarray

    @classmethod
    def zeros_like(cls, bank: ContextBank) -> "Grads":
        return cls(np.zeros_like(bank.id_contexts), np.zeros_like(bank.ood_contexts))


@dataclass(frozen=True)
class LossParts:
    ce: float
    uni: float
    bin: float


def _unit_rows(x, what):
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ZeroVector(f"{what} row {zero[0]} is a zero vector")
    return x / norms[:, None], norms


def _row_grads(coef, sims, vhat, rows_hat, rows_norm):
    # d/d rows of sum_{i,k} coef[i,k] * cos(v_i, t_k), vectorized over rows.
    lead = coef.T @ vhat
    diag = np.einsum("ik,ik->k", coef, sims)
    return (lead - diag[:, None] * rows_hat) / rows_norm[:, None]


def _cosine_blocks(vectors, bank):
    vhat, _ = _unit_rows(vectors, "batch")
    id_hat, id_norm = _unit_rows(bank.id_contexts, "id context")
    if bank.n_ood:
        ood_hat, ood_norm = _unit_rows(bank.ood_contexts, "ood context")
    else:
        ood_hat = np.zeros((0, bank.dim))
        ood_norm = np.zeros(0)
    return vhat, (id_hat, id_norm), (ood_hat, ood_norm)


def cross_entropy_loss(batch: TrainBatch, bank: ContextBank):
    """Mean -log p(label | v) with p the temperature softmax over all
    C+M cosines; returns the loss and its context gradients."""
    n = len(batch.vectors)
    if n == 0:
        raise EmptyInput("empty training batch")
    vhat, (id_hat, id_norm), (ood_hat, ood_norm) = _cosine_blocks(batch.vectors, bank)
    sims = np.hstack([vhat @ id_hat.T, vhat @ ood_hat.T])
    logits = sims / bank.temperature
    logits_shift = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits_shift).sum(axis=1))
    logp = logits_shift - logz[:, None]
    value = -float(logp[np.arange(n), batch.labels].mean())
    probs = np.exp(logp)
    coef = probs.copy()
    coef[np.arange(n), batch.labels] -= 1.0
    coef /= bank.temperature * n
    c = bank.n_classes
    grads = Grads(
        id_contexts=_row_grads(coef[:, :c], sims[:, :c], vhat, id_hat, id_norm),
        ood_contexts=_row_grads(coef[:, c:], sims[:, c:], vhat, ood_hat, ood_norm)
        if bank.n_ood
        else np.zeros_like(bank.ood_contexts),
    )
    return value, grads


def _uniformity(vectors, rows, temperature, what):
    """Mean KL-to-uniform cross term: -(1/K) sum_k log softmax_k, averaged
    over input rows. Minimized (at log K) exactly when every input is
    equidistant from all rows."""
    vhat, _ = _unit_rows(vectors, what)
    rows_hat, rows_norm = _unit_rows(rows, "context")
    n, k = len(vhat), len(rows)
    sims = vhat @ rows_hat.T
    logits = sims / temperature
    logits_shift = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits_shift).sum(axis=1))
    logq = logits_shift - logz[:, None]
    value = -float(logq.mean(axis=1).mean())
    coef = (np.exp(logq) - 1.0 / k) / (temperature * n)
    return value, _row_grads(coef, sims, vhat, rows_hat, rows_norm)


def uniformity_loss(region_vectors, bank: ContextBank):
    """Push high-density regions toward a uniform posterior over the M
    negative rows (Jensen bound: value >= log M). Touches only ood rows."""
    if bank.n_ood == 0:
        raise NoOodContext("uniformity loss needs at least one OOD context row")
    value, ood_grad = _uniformity(
        region_vectors, bank.ood_contexts, bank.temperature, "region"
    )
    return value, Grads(np.zeros_like(bank.id_contexts), ood_grad)


def id_uniformity_loss(region_vectors, bank: ContextBank):
    """No-OOD-context variant: push low-density regions toward a uniform
    posterior over the C ID rows. Touches only id rows."""
    value, id_grad = _uniformity(region_vectors, bank.id_contexts, bank.temperature, "region")
    return value, Grads(id_grad, np.zeros_like(bank.ood_contexts))


def binary_separation_loss(region_vectors, bank: ContextBank):
    """Per region: -log sigmoid(best id cosine) - log(1 - sigmoid(best ood
    cosine)), raw cosines (no temperature). The subgradient flows only into
    each sample's winning row; argmax ties resolve to the lowest index."""
    if bank.n_ood == 0:
        raise NoOodContext("binary separation loss needs at least one OOD context row")
    vhat, (id_hat, id_norm), (ood_hat, ood_norm) = _cosine_blocks(region_vectors, bank)
    n = len(vhat)
    sims_id = vhat @ id_hat.T
    sims_ood = vhat @ ood_hat.T
    win_id = np.argmax(sims_id, axis=1)
    win_ood = np.argmax(sims_ood, axis=1)
    a = sims_id[np.arange(n), win_id]
    b = sims_ood[np.arange(n), win_ood]
    # softplus(-a) = -log sigmoid(a); softplus(b) = -log(1 - sigmoid(b))
    value = float((np.logaddexp(0.0, -a) + np.logaddexp(0.0, b)).mean())
    coef_id = np.zeros_like(sims_id)
    coef_id[np.arange(n), win_id] = (expit(a) - 1.0) / n
    coef_ood = np.zeros_like(sims_ood)
    coef_ood[np.arange(n), win_ood] = expit(b) / n
    return value, Grads(
        _row_grads(coef_id, sims_id, vhat, id_hat, id_norm),
        _row_grads(coef_ood, sims_ood, vhat, ood_hat, ood_norm),
    )


def combined_loss(batch, regions: RegionSets, bank, cfg: TrainConfig, substitutes=None):
    """Weighted total objective with ablation switches.

    Normal mode: ce + uni_weight * uniformity(high) + bin_weight *
    separation(high), where either region term may be disabled or fed
    substitute image embeddings. No-OOD-context mode: ce (over ID rows
    only, since M = 0) + uni_weight * id-uniformity(low).

    Returns (value, Grads, LossParts); parts hold unweighted components.
    """
    subs = substitutes or {}
    ce_value, grads = cross_entropy_loss(batch, bank)
    uni_value = 0.0
    bin_value = 0.0
    if cfg.no_ood_context:
        uni_value, uni_grads = id_uniformity_loss(regions.low, bank)
        grads.id_contexts += cfg.uni_weight * uni_grads.id_contexts
    else:
        if not cfg.disable_uni:
            uni_value, uni_grads = uniformity_loss(subs.get("uni", regions.high), bank)
            grads.ood_contexts += cfg.uni_weight * uni_grads.ood_contexts
        if not cfg.disable_bin:
            bin_value, bin_grads = binary_separation_loss(subs.get("bin", regions.high), bank)
            grads.id_contexts += cfg.bin_weight * bin_grads.id_contexts
            grads.ood_contexts += cfg.bin_weight * bin_grads.ood_contexts
    value = ce_value + cfg.uni_weight * uni_value + cfg.bin_weight * bin_value
    return value, grads, LossParts(ce=ce_value, uni=uni_value, bin=bin_value)


def build_batch(pool_vectors, pool_labels, regions: RegionSets, cfg: TrainConfig, rng):
    """One training batch, in fixed block order: batch_size image embeddings
    drawn without replacement, then batch_size/2 high regions labeled by
    class, then all C low regions with fresh uniform negative labels."""
    pool_vectors = np.asarray(pool_vectors, dtype=np.float64)
    pool_labels = np.asarray(pool_labels)
    if len(pool_vectors) == 0:
        raise EmptyInput("few-shot pool is empty")
    if cfg.batch_size > len(pool_vectors):
        raise ConfigInvalid(
            f"batch_size {cfg.batch_size} exceeds few-shot pool size {len(pool_vectors)}"
        )
    n_classes = regions.n_classes
    half = cfg.batch_size // 2
    if half > n_classes:
        raise SExceedsC(f"half batch ({half}) exceeds class count ({n_classes})")
    img_idx = rng.choice(len(pool_vectors), size=cfg.batch_size, replace=False)
    blocks = [pool_vectors[img_idx]]
    labels = [pool_labels[img_idx].astype(np.int64)]
    if "ce" not in cfg.global_substitute:
        region_idx = rng.choice(n_classes, size=half, replace=False)
        blocks.append(regions.high[region_idx])
        labels.append(region_idx.astype(np.int64))
    if not cfg.no_ood_context:
        if cfg.ood_contexts < 1:
            raise NoOodContext("batch needs negative labels but no OOD contexts exist")
        blocks.append(regions.low)
        labels.append(n_classes + rng.integers(0, cfg.ood_contexts, size=n_classes))
    return TrainBatch(vectors=np.vstack(blocks), labels=np.concatenate(labels))


def cosine_lr(initial, epoch, total_epochs) -> float:
    """Half-cosine decay evaluated per epoch; hits zero at epoch == total."""
    return initial * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class SgdState:
    """Momentum buffers, zero-initialized to match the bank shapes."""

    id_velocity: np.ndarray
    ood_velocity: np.ndarray

    @classmethod
    def for_bank(cls, bank: ContextBank) -> "SgdState":
        return cls(np.zeros_like(bank.id_contexts), np.zeros_like(bank.ood_contexts))


def sgd_step(bank, grads, state, lr, momentum, weight_decay) -> None:
    """Classic momentum update, in place:
    v <- momentum * v + (g + weight_decay * theta); theta <- theta - lr * v."""
    for theta, g, v in (
        (bank.id_contexts, grads.id_contexts, state.id_velocity),
        (bank.ood_contexts, grads.ood_contexts, state.ood_velocity),
    ):
        v *= momentum
        v += g + weight_decay * theta
        theta -= lr * v


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss_ce: float
    loss_uni: float
    loss_bin: float
    total: float
    lr: float


@dataclass
class TrainResult:
    bank: ContextBank
    trace: list = field(default_factory=list)


def _class_pools(vectors, labels):
    labels = np.asarray(labels)
    if labels.min() < 0:
        raise ConfigInvalid("training labels must be >= 0")
    n_classes = int(labels.max()) + 1
    return n_classes, [vectors[labels == c] for c in range(n_classes)]


def train(vectors, labels, cfg: TrainConfig, outliers=None) -> TrainResult:
    """Run the full optimization loop; fully deterministic given cfg.seed.

    Per iteration: refresh every class queue from its training pool, refit
    the Gaussians, resample the region sets (or substitute external
    outlier embeddings for the low regions when ``outliers`` is given),
    build a batch, take one SGD step. The learning rate steps per epoch.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    rng = make_rng(cfg.seed)
    n_classes, pools = _class_pools(vectors, labels)
    if cfg.batch_size // 2 > n_classes:
        raise SExceedsC(
            f"half batch ({cfg.batch_size // 2}) exceeds class count ({n_classes})"
        )
    if outliers is not None:
        outliers = np.asarray(outliers, dtype=np.float64)
        if outliers.ndim != 2 or outliers.shape[1] != vectors.shape[1]:
            raise ConfigInvalid("outlier embeddings must be (n, D) matching the training dim")
        if len(outliers) == 0:
            raise ConfigInvalid("outlier embedding set is empty")

    queues = [
        bootstrap_queue(c, cfg.queue_capacity, pools[c], rng) for c in range(n_classes)
    ]
    few_vecs = []
    few_labels = []
    for c in range(n_classes):
        take = min(cfg.few_shot, len(pools[c]))
        idx = rng.choice(len(pools[c]), size=take, replace=False)
        few_vecs.append(pools[c][idx])
        few_labels.append(np.full(take, c, dtype=np.int64))
    pool_vectors = np.vstack(few_vecs)
    pool_labels = np.concatenate(few_labels)

    gaussians = [fit_class_gaussian(q) for q in queues]
    means = np.array([g.mean for g in gaussians])
    bank = init_context_bank(
        means, cfg.ood_contexts, cfg.temperature, rng, warm_start=cfg.warm_start
    )
    state = SgdState.for_bank(bank)
    iters_per_epoch = math.ceil(len(pool_vectors) / cfg.batch_size)

    trace = []
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.learning_rate, epoch, cfg.epochs)
        sums = np.zeros(4)
        for _ in range(iters_per_epoch):
            queues = [
                refresh_queue(queues[c], pools[c], cfg.refresh_fraction, rng)
                for c in range(n_classes)
            ]
            gaussians = [fit_class_gaussian(q) for q in queues]
            regions = build_region_sets(gaussians, cfg.gaussian_samples, rng)
            if outliers is not None:
                picks = rng.integers(0, len(outliers), size=n_classes)
                regions = RegionSets(high=regions.high, low=outliers[picks])
            batch = build_batch(pool_vectors, pool_labels, regions, cfg, rng)
            substitutes = {}
            for name in ("uni", "bin"):
                if name in cfg.global_substitute:
                    idx = rng.choice(len(pool_vectors), size=n_classes, replace=False)
                    substitutes[name] = pool_vectors[idx]
            value, grads, parts = combined_loss(batch, regions, bank, cfg, substitutes)
            sgd_step(bank, grads, state, lr, cfg.momentum, cfg.weight_decay)
            sums += (parts.ce, parts.uni, parts.bin, value)
        mean = sums / iters_per_epoch
        trace.append(
            EpochStats(
                epoch=epoch,
                loss_ce=float(mean[0]),
                loss_uni=float(mean[1]),
                loss_bin=float(mean[2]),
                total=float(mean[3]),
                lr=lr,
            )
        )
    return TrainResult(bank=bank, trace=trace)
