"""Command-line pipeline: synth -> fit -> train -> score -> eval.

Every stage is deterministic given --seed; artifacts of a failing stage
are removed so partial files never survive. Exit code 0 on success,
1 with a message on stderr for any failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import data
from .contexts import load_context_bank, save_context_bank
from .errors import ConfigInvalid, FsoodError
from .gaussians import bootstrap_queue, build_region_sets, fit_class_gaussian
from .metrics import EvalReport, accuracy, detection_metrics, export_histograms
from .numerics import make_rng
from .scoring import SCORE_TAGS, ScoreKind, ScoredSample, score_dataset
from .training import TrainConfig, train

DEFAULT_NEAR_KIND = "mcm"
DEFAULT_FAR_KIND = "d_energy"
# Desk-scale recipe applied by `pipeline --synth-default` unless the flags
# are given explicitly: the synthetic world has C = 8 classes, so the half
# batch must fit (16/2 <= 8), and directly-learned context rows see much
# larger cosine gradients than encoder-parameterized prompts, so the
# reference learning rate is scaled down with the batch.
SYNTH_DEFAULT_BATCH = 16
SYNTH_DEFAULT_LR = 1e-4


# ---------------------------------------------------------------- helpers


def _read_id_train(manifest):
    train_set = data.read_emb(manifest.path(data.ROLE_ID_TRAIN))
    if train_set.labels.min() < 0:
        raise ConfigInvalid("id_train contains unlabeled samples")
    return train_set


def _class_count(labels) -> int:
    return int(labels.max()) + 1


def _write_text(path, text, artifacts):
    artifacts.append(Path(path))
    Path(path).write_text(text)


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _parse_config_file(path) -> dict:
    """key=value file with TrainConfig field names; types follow the fields."""
    types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in types:
            raise ConfigInvalid(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce_config_value(key, value)
    return values


def _coerce_config_value(key, value):
    field_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    t = field_types[key]
    if t == "bool":
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise ConfigInvalid(f"config key {key}: expected a boolean, got {value!r}")
    if t == "int":
        return int(value)
    if t == "float":
        return float(value)
    if t == "tuple":
        return tuple(v.strip() for v in value.split(",") if v.strip())
    return value  # str | None


_TRAIN_FLAG_FIELDS = (
    "uni_weight",
    "bin_weight",
    "learning_rate",
    "epochs",
    "momentum",
    "weight_decay",
    "batch_size",
    "few_shot",
    "refresh_fraction",
    "gaussian_samples",
    "queue_capacity",
    "ood_contexts",
    "temperature",
    "seed",
)


def _train_config_from_args(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(_parse_config_file(args.config))
    for name in _TRAIN_FLAG_FIELDS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    if getattr(args, "random_init", False):
        values["warm_start"] = False
    if getattr(args, "no_uni", False):
        values["disable_uni"] = True
    if getattr(args, "no_bin", False):
        values["disable_bin"] = True
    if getattr(args, "no_ood_context", False):
        values["no_ood_context"] = True
        values["ood_contexts"] = 0
    if getattr(args, "global_substitute", None):
        values["global_substitute"] = tuple(args.global_substitute)
    if getattr(args, "outlier_emb", None):
        values["outlier_path"] = str(args.outlier_emb)
    return TrainConfig(**values)


# ------------------------------------------------------------------ stages


def _do_synth(out_dir, seed, args=None, artifacts=None) -> Path:
    overrides = {"seed": seed}
    if args is not None:
        for flag, field in (
            ("classes", "n_classes"),
            ("dim", "dim"),
            ("train_per_class", "train_per_class"),
            ("test_per_class", "id_test_per_class"),
        ):
            v = getattr(args, flag, None)
            if v is not None:
                overrides[field] = v
    world = data.synth_world(data.SynthConfig(**overrides))
    return data.write_world(world, out_dir, created=artifacts)


def _do_fit(manifest, out_dir, seed, queue_capacity, gaussian_samples, artifacts):
    train_set = _read_id_train(manifest)
    n_classes = _class_count(train_set.labels)
    rng = make_rng(seed)
    queues = [
        bootstrap_queue(c, queue_capacity, train_set.vectors[train_set.labels == c], rng)
        for c in range(n_classes)
    ]
    gaussians = [fit_class_gaussian(q) for q in queues]
    regions = build_region_sets(gaussians, gaussian_samples, rng)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    class_labels = np.arange(n_classes, dtype=np.int32)
    for name, block in (("region_high.emb", regions.high), ("region_low.emb", regions.low)):
        artifacts.append(out_dir / name)
        data.write_emb(out_dir / name, data.EmbeddingSet(block, class_labels))
    stats_path = out_dir / "gaussian_stats.npz"
    artifacts.append(stats_path)
    np.savez(
        stats_path,
        means=np.array([g.mean for g in gaussians]),
        covariances=np.array([g.cov for g in gaussians]),
        logdets=np.array([g.logdet for g in gaussians]),
    )
    return regions


def _do_train(manifest, cfg, model_path, trace_path, artifacts):
    train_set = _read_id_train(manifest)
    outliers = None
    if cfg.outlier_path:
        outliers = data.read_emb(cfg.outlier_path).vectors
    result = train(train_set.vectors, train_set.labels, cfg, outliers=outliers)
    artifacts.append(Path(model_path))
    save_context_bank(result.bank, model_path)
    lines = ["epoch,loss_ce,loss_uni,loss_bin,total,lr"]
    for s in result.trace:
        lines.append(
            f"{s.epoch},{_fmt(s.loss_ce)},{_fmt(s.loss_uni)},{_fmt(s.loss_bin)},"
            f"{_fmt(s.total)},{_fmt(s.lr)}"
        )
    _write_text(trace_path, "\n".join(lines) + "\n", artifacts)
    return result


def _positive_roles(manifest):
    if data.ROLE_ID_TEST not in manifest.entries:
        raise ConfigInvalid("manifest lacks id_test; cannot score or evaluate")
    return [data.ROLE_ID_TEST] + manifest.roles("csid:")


def _do_score(manifest, bank, near_kind, far_kind, t_score, softmax_mcm):
    """Score the splits each recipe needs; returns [(ScoredSample, kind)]."""
    plan = []
    seen = set()
    for kind_tag, prefix in ((near_kind, "near_ood:"), (far_kind, "far_ood:")):
        for role in _positive_roles(manifest) + manifest.roles(prefix):
            if (role, kind_tag) not in seen:
                seen.add((role, kind_tag))
                plan.append((role, kind_tag))
    rows = []
    for role, kind_tag in plan:
        ds = data.read_emb(manifest.path(role))
        kind = ScoreKind(kind_tag, t_score=t_score, softmax_mcm=softmax_mcm)
        for s in score_dataset(ds.vectors, bank, kind, role, ds.locals):
            rows.append((s, kind_tag))
    return rows


def _write_scores(rows, path, artifacts):
    lines = ["sample_id,split,score_kind,score"]
    for s, kind_tag in rows:
        lines.append(f"{s.sample_id},{s.split},{kind_tag},{_fmt(s.score)}")
    _write_text(path, "\n".join(lines) + "\n", artifacts)


def _read_scores(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"sample_id", "split", "score_kind", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ConfigInvalid(f"{path}: expected columns {sorted(required)}")
        for rec in reader:
            rows.append(
                (
                    ScoredSample(int(rec["sample_id"]), rec["split"], float(rec["score"])),
                    rec["score_kind"],
                )
            )
    return rows


def _build_report(manifest, bank, rows) -> EvalReport:
    id_vectors = []
    id_labels = []
    for role in _positive_roles(manifest):
        ds = data.read_emb(manifest.path(role))
        id_vectors.append(ds.vectors)
        id_labels.append(ds.labels)
    acc = accuracy(np.vstack(id_vectors), np.concatenate(id_labels), bank)

    by_split_kind = {}
    for s, kind_tag in rows:
        by_split_kind.setdefault((s.split, kind_tag), []).append(s.score)
    datasets = {}
    kinds = {}
    ood_roles = sorted({split for (split, _) in by_split_kind if split.startswith(("near_ood:", "far_ood:"))})
    for role in ood_roles:
        role_kinds = sorted({k for (split, k) in by_split_kind if split == role})
        for kind_tag in role_kinds:
            positives = []
            for pos_role in _positive_roles(manifest):
                positives.extend(by_split_kind.get((pos_role, kind_tag), []))
            if not positives:
                raise ConfigInvalid(
                    f"scores lack id_test/csid rows for kind {kind_tag!r} needed by {role}"
                )
            datasets[role] = detection_metrics(
                np.array(positives), np.array(by_split_kind[(role, kind_tag)])
            )
            kinds[role] = kind_tag
    if not datasets:
        raise ConfigInvalid("scores contain no near_ood/far_ood rows to evaluate")
    return EvalReport(datasets=datasets, score_kinds=kinds, accuracy=acc)


# ---------------------------------------------------------------- commands


def cmd_synth(args, artifacts):
    manifest_path = _do_synth(args.out, args.seed, args, artifacts)
    print(manifest_path)
    return 0


def cmd_fit(args, artifacts):
    manifest = data.read_manifest(args.manifest)
    _do_fit(manifest, args.out, args.seed, args.queue_capacity, args.gaussian_samples, artifacts)
    print(Path(args.out) / "region_high.emb")
    return 0


def cmd_train(args, artifacts):
    manifest = data.read_manifest(args.manifest)
    cfg = _train_config_from_args(args)
    result = _do_train(manifest, cfg, args.out_model, args.trace, artifacts)
    if result.trace:
        final = result.trace[-1]
        print(f"trained {cfg.epochs} epochs; final total loss {final.total:.6f}")
    else:
        print("trained 0 epochs; wrote initialized model")
    return 0


def _resolved_kinds(args):
    if args.kind is not None:
        return args.kind, args.kind
    return args.near_kind or DEFAULT_NEAR_KIND, args.far_kind or DEFAULT_FAR_KIND


def cmd_score(args, artifacts):
    manifest = data.read_manifest(args.manifest)
    bank = load_context_bank(args.model)
    near_kind, far_kind = _resolved_kinds(args)
    rows = _do_score(manifest, bank, near_kind, far_kind, args.t_score, args.mcm_softmax)
    _write_scores(rows, args.out, artifacts)
    print(args.out)
    return 0


def cmd_eval(args, artifacts):
    manifest = data.read_manifest(args.manifest)
    bank = load_context_bank(args.model)
    report = _build_report(manifest, bank, _read_scores(args.scores))
    _write_text(args.out_csv, report.to_csv_text(), artifacts)
    _write_text(args.out_table, report.to_table_text(), artifacts)
    print(report.to_table_text(), end="")
    return 0


def cmd_export_hist(args, artifacts):
    rows = _read_scores(args.scores)
    selected = [s for s, kind_tag in rows if kind_tag == args.kind]
    if not selected:
        raise ConfigInvalid(f"no rows with score_kind {args.kind!r} in {args.scores}")
    artifacts.append(Path(args.out))
    export_histograms(selected, args.bins, args.out)
    print(args.out)
    return 0


def cmd_pipeline(args, artifacts):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.seed is None:
        args.seed = 0
    if args.synth_default:
        manifest_path = _do_synth(out / "world", args.seed, args, artifacts)
        if args.batch_size is None:
            args.batch_size = SYNTH_DEFAULT_BATCH
        if args.learning_rate is None:
            args.learning_rate = SYNTH_DEFAULT_LR
    elif args.manifest:
        manifest_path = Path(args.manifest)
    else:
        raise ConfigInvalid("pipeline needs --manifest or --synth-default")
    manifest = data.read_manifest(manifest_path)
    cfg = _train_config_from_args(args)

    _do_fit(manifest, out, cfg.seed, cfg.queue_capacity, cfg.gaussian_samples, artifacts)
    result = _do_train(manifest, cfg, out / "model.bin", out / "trace.csv", artifacts)
    near_kind, far_kind = _resolved_kinds(args)
    rows = _do_score(manifest, result.bank, near_kind, far_kind, args.t_score, args.mcm_softmax)
    _write_scores(rows, out / "scores.csv", artifacts)
    report = _build_report(manifest, result.bank, rows)
    _write_text(out / "report.csv", report.to_csv_text(), artifacts)
    _write_text(out / "report.txt", report.to_table_text(), artifacts)
    for kind_tag in dict.fromkeys((near_kind, far_kind)):
        selected = [s for s, k in rows if k == kind_tag]
        hist_path = out / f"hist_{kind_tag}.csv"
        artifacts.append(hist_path)
        export_histograms(selected, args.bins, hist_path)
    print(report.to_table_text(), end="")
    return 0


# ------------------------------------------------------------------ parser


def _add_train_flags(p, require_io):
    if require_io:
        p.add_argument("--manifest", required=True)
        p.add_argument("--out-model", required=True)
        p.add_argument("--trace", required=True)
    p.add_argument("--config", help="key=value file with TrainConfig fields")
    p.add_argument("--uni-weight", dest="uni_weight", type=float)
    p.add_argument("--bin-weight", dest="bin_weight", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--few-shot", dest="few_shot", type=int)
    p.add_argument("--refresh-fraction", dest="refresh_fraction", type=float)
    p.add_argument("--gaussian-samples", dest="gaussian_samples", type=int)
    p.add_argument("--queue-capacity", dest="queue_capacity", type=int)
    p.add_argument("--ood-contexts", dest="ood_contexts", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--random-init", dest="random_init", action="store_true")
    p.add_argument("--no-uni", dest="no_uni", action="store_true")
    p.add_argument("--no-bin", dest="no_bin", action="store_true")
    p.add_argument("--no-ood-context", dest="no_ood_context", action="store_true")
    p.add_argument(
        "--global-substitute",
        dest="global_substitute",
        action="append",
        choices=["ce", "uni", "bin"],
        help="replace sampled regions with image embeddings in the named loss",
    )
    p.add_argument("--outlier-emb", dest="outlier_emb", help="EMB1 file of external outliers")


def _add_score_flags(p):
    p.add_argument("--kind", choices=SCORE_TAGS, help="one score family for every split")
    p.add_argument("--near-kind", dest="near_kind", choices=SCORE_TAGS)
    p.add_argument("--far-kind", dest="far_kind", choices=SCORE_TAGS)
    p.add_argument("--t-score", dest="t_score", type=float, default=1.0)
    p.add_argument("--mcm-softmax", dest="mcm_softmax", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fsood",
        description="Full-spectrum OOD detection pipeline over embedding files.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic benchmark world")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--train-per-class", dest="train_per_class", type=int)
    p.add_argument("--test-per-class", dest="test_per_class", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit class Gaussians and export sampled regions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--queue-capacity", dest="queue_capacity", type=int, default=500)
    p.add_argument("--gaussian-samples", dest="gaussian_samples", type=int, default=20000)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("train", help="optimize the context bank")
    _add_train_flags(p, require_io=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="score test splits with a trained model")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    _add_score_flags(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute detection metrics and accuracy")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out-csv", dest="out_csv", required=True)
    p.add_argument("--out-table", dest="out_table", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-hist", help="export score histograms as CSV")
    p.add_argument("--scores", required=True)
    p.add_argument("--kind", required=True, choices=SCORE_TAGS)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_hist)

    p = sub.add_parser("pipeline", help="synth/fit/train/score/eval in one run")
    p.add_argument("--out", required=True)
    p.add_argument("--manifest")
    p.add_argument("--synth-default", dest="synth_default", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int, default=40)
    p.add_argument("--classes", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--train-per-class", dest="train_per_class", type=int)
    p.add_argument("--test-per-class", dest="test_per_class", type=int)
    _add_train_flags(p, require_io=False)
    _add_score_flags(p)
    p.set_defaults(func=cmd_pipeline)

    return parser


def cli_run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    artifacts = []
    try:
        return args.func(args, artifacts)
    except (FsoodError, OSError, ValueError) as exc:
        for p in artifacts:
            Path(p).unlink(missing_ok=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    raise SystemExit(cli_run(sys.argv[1:]))


if __name__ == "__main__":
    main()
