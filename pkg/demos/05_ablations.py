"""Training-objective ablations and variant modes.

Runs the loss-term ablation grid (disable the uniformity and separation
terms in every combination), the no-negative-context mode, and the
external-outlier substitution mode on the synthetic world, then compares
near-OOD detection. Shortened settings keep this demo quick; the
benchmark numbers come from the 100-epoch pipeline.
"""

import numpy as np

from fsood import (
    ScoreKind,
    SynthConfig,
    TrainConfig,
    auroc,
    make_rng,
    score_dataset,
    synth_world,
    train,
)

world = synth_world(SynthConfig(seed=7))
train_set = world.sets["id_train"]
base = dict(batch_size=16, learning_rate=1e-4, epochs=30, gaussian_samples=2000, seed=7)


def near_auroc(bank, kind):
    def sc(role):
        out = score_dataset(world.sets[role].vectors, bank, ScoreKind(kind), role)
        return np.array([s.score for s in out])

    positives = np.concatenate([sc("id_test"), sc("csid:jitter")])
    return auroc(positives, sc("near_ood:novel"))


runs = [
    ("full objective", TrainConfig(**base), None),
    ("no uniformity", TrainConfig(**base, disable_uni=True), None),
    ("no separation", TrainConfig(**base, disable_bin=True), None),
    ("cross-entropy only", TrainConfig(**base, disable_uni=True, disable_bin=True), None),
    ("no negative contexts", TrainConfig(**base, no_ood_context=True, ood_contexts=0), None),
]

# external-outlier variant: feed real outlier embeddings instead of the
# sampled low-density regions
outliers = make_rng(99).standard_normal((200, 32)) * 2.0 + 5.0
runs.append(("external outliers", TrainConfig(**base), outliers))

print(f"{'variant':<24}{'near AUROC (mcm)':>18}{'near AUROC (d_energy)':>24}")
for name, cfg, extra in runs:
    bank = train(train_set.vectors, train_set.labels, cfg, outliers=extra).bank
    mcm_score = near_auroc(bank, "mcm")
    de = near_auroc(bank, "d_energy") if bank.n_ood else float("nan")
    print(f"{name:<24}{mcm_score:>18.3f}{de:>24.3f}")
