"""Detection and classification metrics.

Conventions, fixed and tested:
  - ID and covariate-shifted ID samples jointly form the positive class.
  - FPR@95: the threshold is the largest score t with fraction(id >= t)
    >= 0.95; samples exactly at the threshold count as accepted (>=).
  - AUROC is the Mann-Whitney statistic P(id > ood) + 0.5 P(id = ood),
    computed with midranks so heavy ties are exact.
  - AUPR uses step-wise interpolation; equal scores are processed as one
    threshold group. AUPR-OUT negates scores and swaps the positive role.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .contexts import ContextBank, classify_batch
from .errors import EmptyScores, LabelOutOfRange


def _as_scores(x, name):
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size == 0:
        raise EmptyScores(f"{name} score array is empty")
    return x


def fpr_at_tpr(id_scores, ood_scores, tpr_target=0.95) -> float:
    """False-positive rate on OOD at the loosest threshold that still
    accepts at least ``tpr_target`` of the ID scores."""
    id_scores = _as_scores(id_scores, "id")
    ood_scores = _as_scores(ood_scores, "ood")
    n = id_scores.size
    required = tpr_target * n
    # guard the ceil against float noise like 0.95 * 20000 = 19000.000000000004
    k = int(np.ceil(required - 1e-9 * max(1.0, abs(required))))
    if k <= 0:
        return 0.0
    k = min(k, n)
    threshold = np.sort(id_scores)[n - k]
    return float(np.mean(ood_scores >= threshold))


def _midranks(x):
    _, inverse, counts = np.unique(x, return_inverse=True, return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    return ((starts + ends) / 2.0)[inverse]


def auroc(id_scores, ood_scores) -> float:
    """Mann-Whitney AUROC by rank-sum with midranks for ties."""
    id_scores = _as_scores(id_scores, "id")
    ood_scores = _as_scores(ood_scores, "ood")
    n, m = id_scores.size, ood_scores.size
    ranks = _midranks(np.concatenate([id_scores, ood_scores]))
    u = ranks[:n].sum() - n * (n + 1) / 2.0
    return float(u / (n * m))


def aupr(id_scores, ood_scores, positive="in") -> float:
    """Area under precision-recall, step-wise.

    positive="in": ID is the positive class. positive="out": OOD is the
    positive class and all scores are negated (high score = more OOD).
    """
    id_scores = _as_scores(id_scores, "id")
    ood_scores = _as_scores(ood_scores, "ood")
    if positive == "in":
        pos, neg = id_scores, ood_scores
    elif positive == "out":
        pos, neg = -ood_scores, -id_scores
    else:
        raise ValueError(f"positive must be 'in' or 'out', got {positive!r}")
    scores = np.concatenate([pos, neg])
    is_pos = np.concatenate([np.ones(pos.size), np.zeros(neg.size)])
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_pos = is_pos[order]
    tp = np.cumsum(sorted_pos)
    fp = np.cumsum(1.0 - sorted_pos)
    # evaluate precision only at the end of each tie group
    ends = np.append(np.nonzero(np.diff(sorted_scores))[0], scores.size - 1)
    tp_e, fp_e = tp[ends], fp[ends]
    precision = tp_e / (tp_e + fp_e)
    delta_tp = np.diff(np.concatenate([[0.0], tp_e]))
    return float(np.sum(delta_tp * precision) / pos.size)


def accuracy(vectors, labels, bank: ContextBank) -> float:
    """Fraction of embeddings whose best ID cosine matches their label."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise EmptyScores("accuracy of an empty sample set")
    if labels.min() < 0 or labels.max() >= bank.n_classes:
        raise LabelOutOfRange(
            f"labels must lie in [0, {bank.n_classes}), found range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return float(np.mean(classify_batch(vectors, bank) == labels))


@dataclass(frozen=True)
class DetectionMetrics:
    fpr_at_95: float
    auroc: float
    aupr_in: float
    aupr_out: float


def detection_metrics(id_scores, ood_scores, tpr_target=0.95) -> DetectionMetrics:
    return DetectionMetrics(
        fpr_at_95=fpr_at_tpr(id_scores, ood_scores, tpr_target),
        auroc=auroc(id_scores, ood_scores),
        aupr_in=aupr(id_scores, ood_scores, "in"),
        aupr_out=aupr(id_scores, ood_scores, "out"),
    )


def _group_mean(metrics_list):
    if not metrics_list:
        return None
    return DetectionMetrics(
        fpr_at_95=float(np.mean([m.fpr_at_95 for m in metrics_list])),
        auroc=float(np.mean([m.auroc for m in metrics_list])),
        aupr_in=float(np.mean([m.aupr_in for m in metrics_list])),
        aupr_out=float(np.mean([m.aupr_out for m in metrics_list])),
    )


@dataclass
class EvalReport:
    """Per-OOD-dataset detection metrics plus ID+csID classification accuracy.

    ``datasets`` maps manifest roles (near_ood:<name> / far_ood:<name>) to
    metrics; ``score_kinds`` records which score family produced each row.
    """

    datasets: dict
    score_kinds: dict
    accuracy: float

    def group(self, prefix):
        return {k: v for k, v in self.datasets.items() if k.startswith(prefix)}

    def near_mean(self):
        return _group_mean(list(self.group("near_ood").values()))

    def far_mean(self):
        return _group_mean(list(self.group("far_ood").values()))

    def to_csv_text(self) -> str:
        lines = ["dataset,group,score_kind,fpr_at_95,auroc,aupr_in,aupr_out"]
        def fmt(name, group, kind, m):
            return (
                f"{name},{group},{kind},{m.fpr_at_95:.17g},{m.auroc:.17g},"
                f"{m.aupr_in:.17g},{m.aupr_out:.17g}"
            )
        for role in sorted(self.group("near_ood")):
            lines.append(fmt(role, "near", self.score_kinds.get(role, ""), self.datasets[role]))
        if self.near_mean():
            lines.append(fmt("near_mean", "near", "", self.near_mean()))
        for role in sorted(self.group("far_ood")):
            lines.append(fmt(role, "far", self.score_kinds.get(role, ""), self.datasets[role]))
        if self.far_mean():
            lines.append(fmt("far_mean", "far", "", self.far_mean()))
        lines.append(f"accuracy,id+csid,,{self.accuracy:.17g},,,")
        return "\n".join(lines) + "\n"

    def to_table_text(self) -> str:
        header = f"{'dataset':<28}{'group':<7}{'kind':<11}{'FPR@95':>8}{'AUROC':>8}{'AUPR-IN':>9}{'AUPR-OUT':>10}"
        rows = [header, "-" * len(header)]
        def row(name, group, kind, m):
            return (
                f"{name:<28}{group:<7}{kind:<11}{m.fpr_at_95:>8.4f}{m.auroc:>8.4f}"
                f"{m.aupr_in:>9.4f}{m.aupr_out:>10.4f}"
            )
        for role in sorted(self.group("near_ood")):
            rows.append(row(role, "near", self.score_kinds.get(role, ""), self.datasets[role]))
        if self.near_mean():
            rows.append(row("mean", "near", "", self.near_mean()))
        for role in sorted(self.group("far_ood")):
            rows.append(row(role, "far", self.score_kinds.get(role, ""), self.datasets[role]))
        if self.far_mean():
            rows.append(row("mean", "far", "", self.far_mean()))
        rows.append("-" * len(header))
        rows.append(f"classification accuracy (ID + csID): {self.accuracy:.4f}")
        return "\n".join(rows) + "\n"


def export_histograms(scored, bins, path) -> None:
    """Shared-edge score histograms, one count column per split group.

    CSV columns: bin_left, bin_right, then one column per split group
    (the split role up to the first ':'), sorted by group name.
    """
    if bins < 2:
        raise ValueError(f"need at least 2 bins, got {bins}")
    if not scored:
        raise EmptyScores("no scored samples to export")
    scores = np.array([s.score for s in scored])
    groups = sorted({s.split.split(":")[0] for s in scored})
    lo, hi = float(scores.min()), float(scores.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    counts = {}
    for g in groups:
        values = np.array([s.score for s in scored if s.split.split(":")[0] == g])
        counts[g], _ = np.histogram(values, bins=edges)
    lines = ["bin_left,bin_right," + ",".join(groups)]
    for i in range(bins):
        cells = [f"{edges[i]:.17g}", f"{edges[i + 1]:.17g}"]
        cells += [str(int(counts[g][i])) for g in groups]
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
