"""Pipeline command-line interface.

Subcommands cover the whole flow: generate a synthetic dataset, extract block
descriptors, train the codebook, encode histograms, train the classifier, and
evaluate. Every command takes ``--config`` (key = value text) and ``--seed``;
paths default to a standard layout under ``--data``.

Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 numeric
non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import io, plots
from .codebook import KmeansConfig, train_codebook
from .descriptors import BlockSpec, default_block_spec, extract_blocks, generate_synthetic
from .encoders import MultiChannelHistogram, encode_ha, encode_sc, encode_stp
from .errors import (
    ConfigError,
    DataFormatError,
    DimensionMismatchError,
    EmptyQueryError,
    NonConvergenceError,
    NotSpdError,
    NumericOverflowError,
    SpdbowError,
)
from .kernel_svm import (
    CHI2,
    SQEUCLIDEAN,
    compute_channel_scales,
    gram_matrix,
    kernel_row,
    predict,
    train_svm,
)

_STREAM_SYNTHETIC = 1
_STREAM_CODEBOOK = 2
_STREAM_SVM = 3


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for every pipeline stage, loadable from a key = value file."""

    d: int = 72
    width: float = 160.0
    height: float = 120.0
    duration: int = 64
    classes: int = 3
    videos_per_class: int = 20
    trajectories_per_video: int = 400
    train_fraction: float = 0.7
    block_w: float | None = None
    block_h: float | None = None
    block_t: float | None = None
    stride_x: float | None = None
    stride_y: float | None = None
    stride_t: float | None = None
    min_samples: int | None = None
    regularizer: float = 1e-6
    k: int = 2000
    n_iter: int = 100
    epsilon_tol: float = 1e-4
    empty_cluster_policy: str = "reseed_farthest"
    kmeans_init: str = "uniform"
    subsample_cap: int = 30000
    encoder: str = "ha"
    sc_lambda: float = 0.15
    svm_c: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.encoder not in ("ha", "stp", "sc"):
            raise ConfigError(f"unknown encoder {self.encoder!r}, expected ha|stp|sc")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must lie strictly between 0 and 1")
        if self.subsample_cap < 1:
            raise ConfigError("subsample_cap must be positive")


# Config-file key -> dataclass field (a couple of keys are python keywords or
# conventional capitals).
_KEY_ALIASES = {"lambda": "sc_lambda", "C": "svm_c"}

_INT_KEYS = {
    "d", "duration", "classes", "videos_per_class", "trajectories_per_video",
    "min_samples", "k", "n_iter", "subsample_cap", "seed",
}
_STR_KEYS = {"empty_cluster_policy", "kmeans_init", "encoder"}


def load_config(path) -> PipelineConfig:
    values = {}
    known = {f.name for f in fields(PipelineConfig)}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            name = _KEY_ALIASES.get(key, key)
            if name not in known:
                raise ConfigError(f"{path}:{lineno}: unknown configuration key {key!r}")
            values[name] = _coerce(name, value, path, lineno)
    return PipelineConfig(**values)


def _coerce(name, value, path, lineno):
    try:
        if name in _STR_KEYS:
            return value
        if name in _INT_KEYS:
            return int(value)
        return float(value)
    except ValueError:
        raise ConfigError(f"{path}:{lineno}: bad value {value!r} for {name}") from None


def _sub_seed(seed: int, *stream) -> int:
    return int(np.random.SeedSequence([seed, *stream]).generate_state(1)[0])


def _block_spec(cfg: PipelineConfig, meta: dict) -> BlockSpec:
    base = default_block_spec(meta["width"], meta["height"], meta["duration"], meta["d"])
    return BlockSpec(
        block_w=cfg.block_w if cfg.block_w is not None else base.block_w,
        block_h=cfg.block_h if cfg.block_h is not None else base.block_h,
        block_t=cfg.block_t if cfg.block_t is not None else base.block_t,
        stride_x=cfg.stride_x if cfg.stride_x is not None else base.stride_x,
        stride_y=cfg.stride_y if cfg.stride_y is not None else base.stride_y,
        stride_t=cfg.stride_t if cfg.stride_t is not None else base.stride_t,
        min_samples=cfg.min_samples if cfg.min_samples is not None else base.min_samples,
    )


def _require_exists(path, what):
    if not Path(path).exists():
        raise DataFormatError(f"{what} not found: {path}")


# -- commands -------------------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    cfg = _config_from_args(args)
    if cfg.classes < 2:
        raise ConfigError("gen-synthetic needs at least 2 classes")
    if cfg.videos_per_class < 1:
        raise ConfigError("gen-synthetic needs at least 1 video per class")
    out = Path(args.out)
    features_dir = out / "features"
    features_dir.mkdir(parents=True, exist_ok=True)

    entries = []
    n_train = int(round(cfg.train_fraction * cfg.videos_per_class))
    n_train = min(max(n_train, 1), cfg.videos_per_class - 1)
    for class_id in range(cfg.classes):
        for vid_idx in range(cfg.videos_per_class):
            video_id = f"c{class_id:02d}_v{vid_idx:03d}"
            video_seed = _sub_seed(cfg.seed, _STREAM_SYNTHETIC, class_id, vid_idx)
            feats = generate_synthetic(
                class_id,
                cfg.trajectories_per_video,
                cfg.d,
                video_seed,
                width=cfg.width,
                height=cfg.height,
                duration=cfg.duration,
            )
            io.write_features(features_dir / f"{video_id}.lbtf", feats, d=cfg.d)
            entries.append(
                io.ManifestEntry(
                    video_id=video_id,
                    path=f"features/{video_id}.lbtf",
                    label=f"class{class_id}",
                    split="train" if vid_idx < n_train else "test",
                )
            )
    io.write_manifest(out / "manifest.csv", entries)
    io.write_dataset_meta(
        out / "meta.json",
        {"width": cfg.width, "height": cfg.height, "duration": cfg.duration, "d": cfg.d},
    )
    print(
        f"gen-synthetic: {len(entries)} videos ({cfg.classes} classes, "
        f"{n_train} train / {cfg.videos_per_class - n_train} test per class) -> {out}"
    )
    return 0


def cmd_extract(args) -> int:
    cfg = _config_from_args(args)
    manifest_path = args.manifest or Path(args.data) / "manifest.csv"
    meta_path = args.meta or Path(args.data) / "meta.json"
    out_dir = Path(args.out or Path(args.data) / "descriptors")
    _require_exists(manifest_path, "manifest")
    _require_exists(meta_path, "dataset metadata")
    entries = io.read_manifest(manifest_path)
    meta = io.read_dataset_meta(meta_path)
    spec = _block_spec(cfg, meta)
    extent = (meta["width"], meta["height"], meta["duration"])
    out_dir.mkdir(parents=True, exist_ok=True)

    log_rows = []
    total_emitted = total_rejected = 0
    for entry in sorted(entries, key=lambda e: e.video_id):
        feats, d_file = io.read_features_any(io.relative_to_manifest(manifest_path, entry.path))
        if d_file != meta["d"]:
            raise DimensionMismatchError(
                f"{entry.path}: feature dimension {d_file} does not match dataset d={meta['d']}"
            )
        result = extract_blocks(feats, spec, extent, regularizer=cfg.regularizer, d=d_file)
        io.write_block_descriptors(
            out_dir / f"{entry.video_id}.lbbd", result.descriptors, d=d_file
        )
        log_rows.append(
            [
                entry.video_id,
                result.emitted,
                result.rejected_low_count,
                result.rejected_not_spd,
                result.placements,
            ]
        )
        total_emitted += result.emitted
        total_rejected += result.rejected
    with open(out_dir / "extract_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "emitted", "rejected_low_count", "rejected_not_spd", "placements"])
        writer.writerows(log_rows)
    print(
        f"extract: {len(entries)} videos, {total_emitted} descriptors emitted, "
        f"{total_rejected} placements rejected -> {out_dir}"
    )
    return 0


def _train_entries(entries):
    return sorted((e for e in entries if e.split == "train"), key=lambda e: e.video_id)


def cmd_train_codebook(args) -> int:
    cfg = _config_from_args(args)
    manifest_path = args.manifest or Path(args.data) / "manifest.csv"
    desc_dir = Path(args.descriptors or Path(args.data) / "descriptors")
    out_path = Path(args.out or Path(args.data) / "codebook.lbcb")
    _require_exists(manifest_path, "manifest")
    _require_exists(desc_dir, "descriptor directory")

    pool = []
    for entry in _train_entries(io.read_manifest(manifest_path)):
        descriptors, _ = io.read_block_descriptors(desc_dir / f"{entry.video_id}.lbbd")
        pool.extend(desc.cov for desc in descriptors)
    if len(pool) < cfg.k:
        raise ValueError(
            f"training pool has {len(pool)} descriptors, fewer than k={cfg.k}"
        )
    if len(pool) > cfg.subsample_cap:
        rng = np.random.default_rng(
            np.random.SeedSequence([cfg.seed, _STREAM_CODEBOOK, 0])
        )
        keep = np.sort(rng.choice(len(pool), size=cfg.subsample_cap, replace=False))
        pool = [pool[i] for i in keep]

    kmeans_cfg = KmeansConfig(
        k=cfg.k,
        n_iter=cfg.n_iter,
        epsilon_tol=cfg.epsilon_tol,
        seed=_sub_seed(cfg.seed, _STREAM_CODEBOOK, 1),
        empty_cluster_policy=cfg.empty_cluster_policy,
        init=cfg.kmeans_init,
    )
    codebook = train_codebook(pool, kmeans_cfg)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_codebook(out_path, codebook)
    with open(out_path.parent / "training_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "dispersion"])
        for i, eps in enumerate(codebook.dispersion_history, start=1):
            writer.writerow([i, f"{eps:.9g}"])
    plots.save_dispersion_curve(codebook.dispersion_history, out_path.parent / "dispersion.png")
    for i, eps in enumerate(codebook.dispersion_history, start=1):
        print(f"train-codebook: iteration {i} dispersion {eps:.6g}")
    print(
        f"train-codebook: k={codebook.k} atoms from {codebook.n_training} descriptors "
        f"in {codebook.iterations} iterations -> {out_path}"
    )
    return 0


def cmd_encode(args) -> int:
    cfg = _config_from_args(args)
    manifest_path = args.manifest or Path(args.data) / "manifest.csv"
    desc_dir = Path(args.descriptors or Path(args.data) / "descriptors")
    codebook_path = args.codebook or Path(args.data) / "codebook.lbcb"
    out_path = Path(args.out or Path(args.data) / "histograms.csv")
    _require_exists(manifest_path, "manifest")
    _require_exists(codebook_path, "codebook")
    codebook = io.read_codebook(codebook_path)

    records = {}
    log_rows = []
    for entry in sorted(io.read_manifest(manifest_path), key=lambda e: e.video_id):
        descriptors, d_file = io.read_block_descriptors(desc_dir / f"{entry.video_id}.lbbd")
        if d_file != codebook.source_dim:
            raise DimensionMismatchError(
                f"{entry.video_id}: descriptor dimension {d_file} does not match "
                f"codebook source dimension {codebook.source_dim}"
            )
        if not descriptors:
            print(f"encode: warning: {entry.video_id} has no descriptors, skipped", file=sys.stderr)
            log_rows.append([entry.video_id, "skipped_empty"])
            continue
        if cfg.encoder == "ha":
            mch = MultiChannelHistogram.single("ha", encode_ha(descriptors, codebook))
        elif cfg.encoder == "stp":
            mch = encode_stp(descriptors, codebook)
        else:
            mch = MultiChannelHistogram.single(
                "sc", encode_sc(descriptors, codebook, lam=cfg.sc_lambda)
            )
        records[entry.video_id] = mch
        log_rows.append([entry.video_id, "encoded"])
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_histograms(out_path, records)
    with open(out_path.parent / "encode_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["video_id", "status"])
        writer.writerows(log_rows)
    print(f"encode: {len(records)} videos encoded with {cfg.encoder} -> {out_path}")
    return 0


def _split_histograms(entries, histograms, split):
    """(video_ids, MCHs, labels) for one split, sorted by video id; videos
    without a histogram row (skipped at encode time) are dropped."""
    ids, hists, labels = [], [], []
    for entry in sorted((e for e in entries if e.split == split), key=lambda e: e.video_id):
        if entry.video_id not in histograms:
            print(
                f"warning: {entry.video_id} has no histogram row, dropped from {split}",
                file=sys.stderr,
            )
            continue
        ids.append(entry.video_id)
        hists.append(histograms[entry.video_id])
        labels.append(entry.label)
    return ids, hists, labels


def cmd_train(args) -> int:
    cfg = _config_from_args(args)
    manifest_path = args.manifest or Path(args.data) / "manifest.csv"
    hist_path = args.histograms or Path(args.data) / "histograms.csv"
    out_path = Path(args.out or Path(args.data) / "model.lbsv")
    _require_exists(manifest_path, "manifest")
    _require_exists(hist_path, "histogram table")

    entries = io.read_manifest(manifest_path)
    histograms = io.read_histograms(hist_path)
    ids, hists, labels = _split_histograms(entries, histograms, "train")
    if not ids:
        raise ValueError("training split is empty")
    if len(set(labels)) < 2:
        raise ValueError("training requires at least two classes")

    metric = SQEUCLIDEAN if hists[0].names == ("sc",) else CHI2
    params = compute_channel_scales(hists, metric=metric)
    gram = gram_matrix(hists, params)
    model = train_svm(gram, labels, c_reg=cfg.svm_c, params=params)
    correct = sum(predict(model, gram[i])[0] == labels[i] for i in range(len(labels)))
    accuracy = correct / len(labels)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    io.write_model(out_path, model)
    if not all(model.converged):
        print("train: warning: some classes hit the SMO iteration budget", file=sys.stderr)
    print(
        f"train: {len(ids)} videos, {len(model.classes)} classes, "
        f"training accuracy {accuracy * 100:.1f}% -> {out_path}"
    )
    return 0


def cmd_evaluate(args) -> int:
    _config_from_args(args)  # validates the config file if one was given
    manifest_path = args.manifest or Path(args.data) / "manifest.csv"
    hist_path = args.histograms or Path(args.data) / "histograms.csv"
    model_path = args.model or Path(args.data) / "model.lbsv"
    out_dir = Path(args.out or Path(args.data) / "reports")
    _require_exists(manifest_path, "manifest")
    _require_exists(hist_path, "histogram table")
    _require_exists(model_path, "model")

    entries = io.read_manifest(manifest_path)
    histograms = io.read_histograms(hist_path)
    model = io.read_model(model_path)
    _, train_hists, _ = _split_histograms(entries, histograms, "train")
    if len(train_hists) != model.n_train:
        raise DataFormatError(
            f"model was trained on {model.n_train} videos but the manifest/histograms "
            f"yield {len(train_hists)} train rows"
        )
    test_ids, test_hists, test_labels = _split_histograms(entries, histograms, "test")
    if not test_ids:
        raise ValueError("test split is empty")
    unknown = sorted(set(test_labels) - set(model.classes))
    if unknown:
        raise DataFormatError(f"test labels {unknown} missing from the model's label set")

    classes = list(model.classes)
    confusion = np.zeros((len(classes), len(classes)), dtype=int)
    rows = []
    for vid, hist, true_label in zip(test_ids, test_hists, test_labels):
        label, scores = predict(model, kernel_row(hist, train_hists, model.params))
        confusion[classes.index(true_label), classes.index(label)] += 1
        rows.append([vid, true_label, label] + [f"{s:.9g}" for s in scores])

    total = confusion.sum()
    ccr = float(np.trace(confusion)) / total
    precision, recall = [], []
    for ci in range(len(classes)):
        col, row = confusion[:, ci].sum(), confusion[ci, :].sum()
        precision.append(confusion[ci, ci] / col if col else 0.0)
        recall.append(confusion[ci, ci] / row if row else 0.0)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["video_id", "true_label", "predicted_label"]
            + [f"score_{c}" for c in classes]
        )
        writer.writerows(rows)

    lines = [f"correct classification rate: {ccr * 100:.2f}% ({np.trace(confusion)}/{total})", ""]
    lines.append(f"{'class':<16}{'precision':>10}{'recall':>10}")
    for ci, cls in enumerate(classes):
        lines.append(f"{cls:<16}{precision[ci] * 100:>9.1f}%{recall[ci] * 100:>9.1f}%")
    lines += ["", "confusion matrix (rows: true, columns: predicted)"]
    lines.append(",".join(["true\\pred"] + [str(c) for c in classes]))
    for ci, cls in enumerate(classes):
        lines.append(",".join([str(cls)] + [str(v) for v in confusion[ci]]))
    (out_dir / "summary.txt").write_text("\n".join(lines) + "\n")
    plots.save_confusion_matrix(confusion, classes, out_dir / "confusion_matrix.png")
    print(f"evaluate: CCR {ccr * 100:.2f}% over {total} test videos -> {out_dir}")
    return 0


# -- argument parsing -----------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _config_from_args(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _add_common(parser):
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--seed", type=int, help="master seed (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spdbow", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-synthetic", parents=[], help="write a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset output directory")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("extract", help="extract block covariance descriptors")
    _add_common(p)
    p.add_argument("--data", default=".", help="dataset root directory")
    p.add_argument("--manifest")
    p.add_argument("--meta")
    p.add_argument("--out", help="descriptor output directory")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train-codebook", help="learn the visual dictionary")
    _add_common(p)
    p.add_argument("--data", default=".")
    p.add_argument("--manifest")
    p.add_argument("--descriptors")
    p.add_argument("--out", help="codebook output file")
    p.set_defaults(func=cmd_train_codebook)

    p = sub.add_parser("encode", help="encode descriptor sets into histograms")
    _add_common(p)
    p.add_argument("--data", default=".")
    p.add_argument("--manifest")
    p.add_argument("--descriptors")
    p.add_argument("--codebook")
    p.add_argument("--out", help="histogram table output file")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the one-vs-all kernel SVM")
    _add_common(p)
    p.add_argument("--data", default=".")
    p.add_argument("--manifest")
    p.add_argument("--histograms")
    p.add_argument("--out", help="model output file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="predict the test split and report")
    _add_common(p)
    p.add_argument("--data", default=".")
    p.add_argument("--manifest")
    p.add_argument("--histograms")
    p.add_argument("--model")
    p.add_argument("--out", help="report output directory")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (NonConvergenceError, NumericOverflowError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (
        DataFormatError,
        DimensionMismatchError,
        EmptyQueryError,
        NotSpdError,
        SpdbowError,
        ValueError,
        OSError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
