import math

import numpy as np
import pytest

from fsood.contexts import ContextBank
from fsood.errors import ConfigInvalid, NoOodContext, SExceedsC
from fsood.gaussians import RegionSets
from fsood.numerics import make_rng
from fsood.training import (
    Grads,
    SgdState,
    TrainBatch,
    TrainConfig,
    binary_separation_loss,
    build_batch,
    combined_loss,
    cosine_lr,
    cross_entropy_loss,
    id_uniformity_loss,
    sgd_step,
    train,
    uniformity_loss,
)


def numeric_grad(fn, bank, step=1e-5):
    """Central finite differences of fn(bank) over every context entry."""
    out = Grads.zeros_like(bank)
    for block, target in (("id_contexts", out.id_contexts), ("ood_contexts", out.ood_contexts)):
        theta = getattr(bank, block)
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + step
            hi = fn(bank)
            theta[idx] = orig - step
            lo = fn(bank)
            theta[idx] = orig
            target[idx] = (hi - lo) / (2 * step)
    return out


def grad_relative_error(analytic, numeric):
    a = np.concatenate([analytic.id_contexts.ravel(), analytic.ood_contexts.ravel()])
    b = np.concatenate([numeric.id_contexts.ravel(), numeric.ood_contexts.ravel()])
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def random_instance(seed, n_classes=4, n_ood=3, dim=8, n_batch=6, tau=0.5):
    rng = make_rng(seed)
    bank = ContextBank(
        id_contexts=rng.standard_normal((n_classes, dim)),
        ood_contexts=rng.standard_normal((n_ood, dim)),
        temperature=tau,
    )
    vectors = rng.standard_normal((n_batch, dim))
    labels = rng.integers(0, n_classes + n_ood, size=n_batch)
    return bank, TrainBatch(vectors=vectors, labels=labels), rng


class TestCrossEntropy:
    def test_hand_two_way(self):
        # item equals its own context row, the other cosine is zero
        bank = ContextBank(
            id_contexts=np.array([[1.0, 0.0]]),
            ood_contexts=np.array([[0.0, 1.0]]),
            temperature=1.0,
        )
        batch = TrainBatch(vectors=np.array([[1.0, 0.0]]), labels=np.array([0]))
        value, _ = cross_entropy_loss(batch, bank)
        assert value == pytest.approx(math.log(1 + math.exp(-1.0)), abs=1e-12)

    def test_uniform_cosines_hit_max_entropy(self):
        # orthogonal input: every cosine is zero, so p is uniform over C+M
        bank = ContextBank(
            id_contexts=np.array([[1.0, 0, 0], [0, 1.0, 0]]),
            ood_contexts=np.array([[1.0, -1.0, 0]]),
            temperature=0.3,
        )
        batch = TrainBatch(vectors=np.array([[0.0, 0.0, 2.0]]), labels=np.array([2]))
        value, _ = cross_entropy_loss(batch, bank)
        assert value == pytest.approx(math.log(3), abs=1e-12)
        batch2 = TrainBatch(vectors=np.array([[0.0, 0.0, 2.0]]), labels=np.array([0]))
        assert cross_entropy_loss(batch2, bank)[0] == pytest.approx(math.log(3), abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        for seed in range(5):
            bank, batch, _ = random_instance(seed)
            _, grads = cross_entropy_loss(batch, bank)
            numeric = numeric_grad(lambda b: cross_entropy_loss(batch, b)[0], bank)
            assert grad_relative_error(grads, numeric) < 1e-4


class TestUniformity:
    def test_equal_cosines_reach_log_m(self):
        rng = make_rng(0)
        row = rng.standard_normal(5)
        bank = ContextBank(
            id_contexts=rng.standard_normal((2, 5)),
            ood_contexts=np.vstack([row * 2.0, row * 0.5, row * 7.0]),
            temperature=0.7,
        )
        value, grads = uniformity_loss(rng.standard_normal((4, 5)), bank)
        assert value == pytest.approx(math.log(3), abs=1e-10)
        assert np.array_equal(grads.id_contexts, np.zeros_like(bank.id_contexts))

    def test_jensen_lower_bound(self):
        rng = make_rng(1)
        for _ in range(200):
            bank = ContextBank(
                id_contexts=rng.standard_normal((2, 4)),
                ood_contexts=rng.standard_normal((3, 4)),
                temperature=0.5,
            )
            value, _ = uniformity_loss(rng.standard_normal((5, 4)), bank)
            assert value >= math.log(3) - 1e-12

    def test_gradient_matches_finite_differences(self):
        for seed in range(5):
            bank, batch, rng = random_instance(seed)
            regions = rng.standard_normal((4, bank.dim))
            _, grads = uniformity_loss(regions, bank)
            numeric = numeric_grad(lambda b: uniformity_loss(regions, b)[0], bank)
            assert grad_relative_error(grads, numeric) < 1e-4
            assert np.array_equal(grads.id_contexts, np.zeros_like(bank.id_contexts))

    def test_no_ood_context(self):
        bank = ContextBank(np.eye(2), np.zeros((0, 2)), 1.0)
        with pytest.raises(NoOodContext):
            uniformity_loss(np.ones((1, 2)), bank)

    def test_id_variant_touches_only_id_rows(self):
        bank, _, rng = random_instance(7)
        regions = rng.standard_normal((3, bank.dim))
        value, grads = id_uniformity_loss(regions, bank)
        assert value >= math.log(bank.n_classes) - 1e-12
        assert np.array_equal(grads.ood_contexts, np.zeros_like(bank.ood_contexts))
        numeric = numeric_grad(lambda b: id_uniformity_loss(regions, b)[0], bank)
        assert grad_relative_error(grads, numeric) < 1e-4


class TestBinarySeparation:
    def test_hand_perfect_split(self):
        bank = ContextBank(
            id_contexts=np.array([[1.0, 0.0]]),
            ood_contexts=np.array([[-1.0, 0.0]]),
            temperature=1.0,
        )
        value, _ = binary_separation_loss(np.array([[1.0, 0.0]]), bank)
        # -log sigmoid(1) - log(1 - sigmoid(-1)) = 2 * softplus(-1)
        assert value == pytest.approx(2 * math.log(1 + math.exp(-1.0)), abs=1e-12)

    def test_hand_zero_cosines(self):
        bank = ContextBank(
            id_contexts=np.array([[1.0, 0.0, 0.0]]),
            ood_contexts=np.array([[0.0, 1.0, 0.0]]),
            temperature=1.0,
        )
        value, _ = binary_separation_loss(np.array([[0.0, 0.0, 1.0]]), bank)
        assert value == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_gradient_touches_only_winning_rows(self):
        bank, _, rng = random_instance(3)
        region = rng.standard_normal((1, bank.dim))
        _, grads = binary_separation_loss(region, bank)
        assert np.sum(np.any(grads.id_contexts != 0, axis=1)) == 1
        assert np.sum(np.any(grads.ood_contexts != 0, axis=1)) == 1

    def test_at_most_one_row_per_sample(self):
        # per sample exactly one id and one ood winner, so n samples touch
        # at most n rows in each block
        bank, _, rng = random_instance(8, n_classes=6, n_ood=4)
        for n in (2, 3, 5):
            regions = rng.standard_normal((n, bank.dim))
            _, grads = binary_separation_loss(regions, bank)
            assert np.sum(np.any(grads.id_contexts != 0, axis=1)) <= n
            assert np.sum(np.any(grads.ood_contexts != 0, axis=1)) <= n

    def test_gradient_matches_finite_differences(self):
        checked = 0
        seed = 0
        while checked < 5:
            bank, _, rng = random_instance(seed)
            seed += 1
            regions = rng.standard_normal((4, bank.dim))
            # skip instances with near-tied argmax (subgradient kink)
            from fsood.training import _cosine_blocks

            vhat, (id_hat, _), (ood_hat, _) = _cosine_blocks(regions, bank)
            margins = []
            for sims in (vhat @ id_hat.T, vhat @ ood_hat.T):
                top2 = np.sort(sims, axis=1)[:, -2:]
                margins.append((top2[:, 1] - top2[:, 0]).min())
            if min(margins) < 1e-3:
                continue
            _, grads = binary_separation_loss(regions, bank)
            numeric = numeric_grad(lambda b: binary_separation_loss(regions, b)[0], bank)
            assert grad_relative_error(grads, numeric) < 1e-4
            checked += 1


class TestCombined:
    def base_cfg(self, **kw):
        defaults = dict(
            batch_size=4,
            few_shot=2,
            gaussian_samples=10,
            queue_capacity=5,
            ood_contexts=3,
            epochs=1,
            temperature=0.5,
        )
        defaults.update(kw)
        return TrainConfig(**defaults)

    def make_parts(self, seed=0):
        bank, batch, rng = random_instance(seed, n_classes=4, n_ood=3, dim=8)
        regions = RegionSets(
            high=rng.standard_normal((4, 8)), low=rng.standard_normal((4, 8))
        )
        return bank, batch, regions

    def test_zero_weights_reduce_to_cross_entropy(self):
        bank, batch, regions = self.make_parts()
        cfg = self.base_cfg(uni_weight=0.0, bin_weight=0.0)
        value, grads, parts = combined_loss(batch, regions, bank, cfg)
        ce_value, ce_grads = cross_entropy_loss(batch, bank)
        assert value == pytest.approx(ce_value, abs=1e-15)
        np.testing.assert_allclose(grads.id_contexts, ce_grads.id_contexts, atol=1e-15)
        np.testing.assert_allclose(grads.ood_contexts, ce_grads.ood_contexts, atol=1e-15)

    def test_default_weights_match_component_sum(self):
        bank, batch, regions = self.make_parts(1)
        cfg = self.base_cfg()  # uni 0.5, bin 0.1
        value, grads, parts = combined_loss(batch, regions, bank, cfg)
        ce_v, ce_g = cross_entropy_loss(batch, bank)
        uni_v, uni_g = uniformity_loss(regions.high, bank)
        bin_v, bin_g = binary_separation_loss(regions.high, bank)
        assert value == pytest.approx(ce_v + 0.5 * uni_v + 0.1 * bin_v, rel=1e-14)
        assert parts.ce == ce_v and parts.uni == uni_v and parts.bin == bin_v
        np.testing.assert_allclose(
            grads.id_contexts,
            ce_g.id_contexts + 0.5 * uni_g.id_contexts + 0.1 * bin_g.id_contexts,
            atol=1e-14,
        )
        np.testing.assert_allclose(
            grads.ood_contexts,
            ce_g.ood_contexts + 0.5 * uni_g.ood_contexts + 0.1 * bin_g.ood_contexts,
            atol=1e-14,
        )

    def test_disable_flags_match_each_ablation_row(self):
        bank, batch, regions = self.make_parts(2)
        ce_v, _ = cross_entropy_loss(batch, bank)
        uni_v, _ = uniformity_loss(regions.high, bank)
        bin_v, _ = binary_separation_loss(regions.high, bank)
        rows = {
            (True, True): ce_v,
            (False, True): ce_v + 0.5 * uni_v,
            (True, False): ce_v + 0.1 * bin_v,
            (False, False): ce_v + 0.5 * uni_v + 0.1 * bin_v,
        }
        for (no_uni, no_bin), expected in rows.items():
            cfg = self.base_cfg(disable_uni=no_uni, disable_bin=no_bin)
            value, _, _ = combined_loss(batch, regions, bank, cfg)
            assert value == pytest.approx(expected, rel=1e-14)

    def test_substitutes_replace_region_inputs(self):
        bank, batch, regions = self.make_parts(3)
        rng = make_rng(99)
        subs = {"uni": rng.standard_normal((4, 8)), "bin": rng.standard_normal((4, 8))}
        cfg = self.base_cfg()
        value, _, parts = combined_loss(batch, regions, bank, cfg, substitutes=subs)
        assert parts.uni == uniformity_loss(subs["uni"], bank)[0]
        assert parts.bin == binary_separation_loss(subs["bin"], bank)[0]

    def test_no_ood_context_mode(self):
        rng = make_rng(4)
        bank = ContextBank(rng.standard_normal((4, 8)), np.zeros((0, 8)), 0.5)
        batch = TrainBatch(rng.standard_normal((5, 8)), rng.integers(0, 4, 5))
        regions = RegionSets(rng.standard_normal((4, 8)), rng.standard_normal((4, 8)))
        cfg = self.base_cfg(no_ood_context=True, ood_contexts=0)
        value, grads, parts = combined_loss(batch, regions, bank, cfg)
        ce_v, _ = cross_entropy_loss(batch, bank)
        uni_v, _ = id_uniformity_loss(regions.low, bank)
        assert value == pytest.approx(ce_v + 0.5 * uni_v, rel=1e-14)
        assert parts.bin == 0.0

    def test_combined_gradient_matches_finite_differences(self):
        bank, batch, regions = self.make_parts(5)
        cfg = self.base_cfg()
        _, grads, _ = combined_loss(batch, regions, bank, cfg)
        numeric = numeric_grad(lambda b: combined_loss(batch, regions, b, cfg)[0], bank)
        assert grad_relative_error(grads, numeric) < 1e-4


class TestBuildBatch:
    def test_reference_shape(self):
        # 200 classes, 15 negatives, batch 64 -> 64 + 32 + 200 items
        rng = make_rng(0)
        pool = rng.standard_normal((400, 4))
        pool_labels = np.repeat(np.arange(200), 2)
        regions = RegionSets(rng.standard_normal((200, 4)), rng.standard_normal((200, 4)))
        cfg = TrainConfig(batch_size=64, ood_contexts=15, queue_capacity=5, gaussian_samples=2)
        batch = build_batch(pool, pool_labels, regions, cfg, make_rng(1))
        assert len(batch.vectors) == 64 + 32 + 200
        assert np.all(batch.labels[:96] < 200)
        assert np.all(batch.labels[64:96] >= 0)
        o_labels = batch.labels[96:]
        assert np.all((o_labels >= 200) & (o_labels < 215))

    def test_single_negative_class(self):
        rng = make_rng(2)
        pool = rng.standard_normal((8, 3))
        pool_labels = np.repeat(np.arange(4), 2)
        regions = RegionSets(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
        cfg = TrainConfig(batch_size=4, ood_contexts=1, queue_capacity=5, gaussian_samples=2)
        batch = build_batch(pool, pool_labels, regions, cfg, make_rng(3))
        assert np.all(batch.labels[-4:] == 4)

    def test_deterministic(self):
        rng = make_rng(4)
        pool = rng.standard_normal((20, 3))
        pool_labels = np.repeat(np.arange(10), 2)
        regions = RegionSets(rng.standard_normal((10, 3)), rng.standard_normal((10, 3)))
        cfg = TrainConfig(batch_size=6, ood_contexts=3, queue_capacity=5, gaussian_samples=2)
        a = build_batch(pool, pool_labels, regions, cfg, make_rng(5))
        b = build_batch(pool, pool_labels, regions, cfg, make_rng(5))
        np.testing.assert_array_equal(a.vectors, b.vectors)
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_half_batch_exceeding_classes_rejected(self):
        rng = make_rng(6)
        pool = rng.standard_normal((40, 3))
        pool_labels = np.repeat(np.arange(4), 10)
        regions = RegionSets(rng.standard_normal((4, 3)), rng.standard_normal((4, 3)))
        cfg = TrainConfig(batch_size=10, ood_contexts=3, queue_capacity=5, gaussian_samples=2)
        with pytest.raises(SExceedsC):
            build_batch(pool, pool_labels, regions, cfg, make_rng(7))

    def test_odd_batch_rejected(self):
        with pytest.raises(ConfigInvalid):
            TrainConfig(batch_size=7)


class TestSgd:
    def make_bank(self, seed=0):
        rng = make_rng(seed)
        return ContextBank(rng.standard_normal((3, 4)), rng.standard_normal((2, 4)), 1.0)

    def test_zero_grad_zero_decay_is_fixed_point(self):
        bank = self.make_bank()
        before_id = bank.id_contexts.copy()
        state = SgdState.for_bank(bank)
        sgd_step(bank, Grads.zeros_like(bank), state, lr=0.1, momentum=0.9, weight_decay=0.0)
        np.testing.assert_array_equal(bank.id_contexts, before_id)

    def test_cosine_schedule_endpoints(self):
        assert cosine_lr(0.004, 0, 100) == pytest.approx(0.004)
        assert cosine_lr(0.004, 100, 100) == pytest.approx(0.0, abs=1e-18)
        assert cosine_lr(0.004, 50, 100) == pytest.approx(0.002)

    def test_descends_quadratic_bowl(self):
        # f(theta) = ||theta||^2 with gradient 2 * theta
        bank = self.make_bank(1)
        state = SgdState.for_bank(bank)
        before = np.sum(bank.id_contexts**2) + np.sum(bank.ood_contexts**2)
        grads = Grads(2 * bank.id_contexts, 2 * bank.ood_contexts)
        sgd_step(bank, grads, state, lr=0.01, momentum=0.0, weight_decay=0.0)
        after = np.sum(bank.id_contexts**2) + np.sum(bank.ood_contexts**2)
        assert after < before

    def test_weight_decay_shrinks_norm_monotonically(self):
        bank = self.make_bank(2)
        state = SgdState.for_bank(bank)
        norms = [np.linalg.norm(bank.id_contexts)]
        for _ in range(20):
            sgd_step(bank, Grads.zeros_like(bank), state, lr=0.05, momentum=0.5, weight_decay=0.01)
            norms.append(np.linalg.norm(bank.id_contexts))
        assert all(b < a for a, b in zip(norms, norms[1:]))


def tiny_world(seed=0, n_classes=4, dim=6, per_class=40):
    rng = make_rng(seed)
    means = rng.standard_normal((n_classes, dim)) * 4.0
    vectors = []
    labels = []
    for c in range(n_classes):
        vectors.append(means[c] + rng.standard_normal((per_class, dim)))
        labels.append(np.full(per_class, c))
    return np.vstack(vectors), np.concatenate(labels)


def tiny_cfg(**kw):
    defaults = dict(
        batch_size=8,
        few_shot=8,
        gaussian_samples=200,
        queue_capacity=30,
        ood_contexts=3,
        epochs=10,
        seed=5,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


class TestTrain:
    def test_zero_epochs_returns_initialization(self):
        vectors, labels = tiny_world()
        result = train(vectors, labels, tiny_cfg(epochs=0))
        # warm start: id rows are the unit-normalized queue means
        np.testing.assert_allclose(
            np.linalg.norm(result.bank.id_contexts, axis=1), 1.0, atol=1e-12
        )
        assert result.trace == []

    def test_loss_decreases(self):
        vectors, labels = tiny_world()
        result = train(vectors, labels, tiny_cfg(epochs=20))
        first = np.mean([s.total for s in result.trace[:5]])
        last = np.mean([s.total for s in result.trace[-5:]])
        assert last < first

    def test_seed_reproducibility(self):
        vectors, labels = tiny_world()
        a = train(vectors, labels, tiny_cfg(epochs=3))
        b = train(vectors, labels, tiny_cfg(epochs=3))
        np.testing.assert_array_equal(a.bank.id_contexts, b.bank.id_contexts)
        np.testing.assert_array_equal(a.bank.ood_contexts, b.bank.ood_contexts)
        assert a.trace == b.trace

    def test_trace_records_schedule(self):
        vectors, labels = tiny_world()
        result = train(vectors, labels, tiny_cfg(epochs=4))
        assert [s.epoch for s in result.trace] == [0, 1, 2, 3]
        assert result.trace[0].lr == pytest.approx(0.004)
        assert all(s.lr <= 0.004 for s in result.trace)

    def test_no_ood_context_trains_id_only(self):
        vectors, labels = tiny_world()
        cfg = tiny_cfg(no_ood_context=True, ood_contexts=0, epochs=3)
        result = train(vectors, labels, cfg)
        assert result.bank.n_ood == 0
        assert all(s.loss_bin == 0.0 for s in result.trace)

    def test_outlier_substitution_mode(self):
        vectors, labels = tiny_world()
        rng = make_rng(77)
        outliers = rng.standard_normal((50, vectors.shape[1])) + 20.0
        a = train(vectors, labels, tiny_cfg(epochs=3), outliers=outliers)
        b = train(vectors, labels, tiny_cfg(epochs=3))
        assert not np.allclose(a.bank.ood_contexts, b.bank.ood_contexts)

    def test_global_substitute_changes_result(self):
        vectors, labels = tiny_world()
        full = train(vectors, labels, tiny_cfg(epochs=3))
        subbed = train(vectors, labels, tiny_cfg(epochs=3, global_substitute=("uni", "bin")))
        assert not np.allclose(full.bank.ood_contexts, subbed.bank.ood_contexts)
