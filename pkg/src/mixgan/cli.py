"""``mixgan`` command line: train-content, train-mixture, generate, evaluate.

Exit codes: 0 success, 2 invalid configuration or arguments, 3 data or
checkpoint problem, 4 numeric failure during training. Logs go to stderr;
artifacts are written under the output directory only.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as cfgmod
from .checkpoint import load_checkpoint, save_checkpoint, write_loss_csv
from .data import foreground_mask, palette_of, synth_content_corpus, synth_style_corpus
from .evaluation import (
    export_features_csv,
    extract_features,
    mmd_report,
    pca_2d,
    plot_embedding,
    save_classifier,
    success_proxy,
    train_domain_classifier,
    train_shape_classifier,
)
from .exceptions import (
    ArgumentError,
    ConfigError,
    EmptyDatasetError,
    FormatError,
    IoError,
    MixganError,
    NonFiniteError,
    ShapeError,
    StageError,
    VersionError,
)
from .generate import export_images, export_pairs, generate_content, generate_mixture, sample_latent
from .train import TrainingAborted, train_content_stage, train_mixture_stage

logger = logging.getLogger("mixgan")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
SAMPLE_KINDS = ("mixture", "content", "content-data")
# evaluation-only corpora are drawn from seeds offset from the training ones
HELDOUT_SEED_OFFSET = 1000


class DataProblem(MixganError):
    """Raised for unreadable inputs; maps to exit code 3."""


OUTPUTS = {
    "train-content": ["content.mxgn", "content_loss.csv", "content_samples.png"],
    "train-mixture": ["mixture.mxgn", "mixture_loss.csv", "pairs.png", "pairs.json", "mixture_samples.png"],
    "generate": ["generated.png", "generated_<i>.png"],
    "evaluate": ["report.json", "features.csv", "pca.png", "domain_classifier.npz", "shape_classifier.npz"],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixgan", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON run config")
    parser.add_argument("--preset", choices=sorted(cfgmod.PRESETS), help="built-in base config")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    parser.add_argument("--threads", type=int, help="torch intra-op threads (1 keeps runs bit-reproducible)")
    parser.add_argument("--dry-run", action="store_true", help="validate and print the plan, no compute")
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train-content", help="stage 1: adversarial autoencoder on content images")
    p = sub.add_parser("train-mixture", help="stage 2: mixture generator against the patch critic")
    p.add_argument("--content-ckpt", help="stage-1 checkpoint (default: <out>/content.mxgn)")
    p = sub.add_parser("generate", help="sample mixture images from a checkpoint")
    p.add_argument("--ckpt", help="mixture checkpoint (default: <out>/mixture.mxgn)")
    p.add_argument("--n", type=int, default=64, help="number of images")
    p = sub.add_parser("evaluate", help="MMD report, success proxy and feature export")
    p.add_argument("--ckpt", help="checkpoint (default: <out>/mixture.mxgn)")
    p.add_argument("--samples", choices=SAMPLE_KINDS, default="mixture",
                   help="what to evaluate: mixture images, content-decoder images, or the content data itself")
    return parser


def _resolve(args) -> cfgmod.RunConfig:
    overrides = {"seed": args.seed, "threads": args.threads, "output_dir": args.out}
    return cfgmod.resolve(args.preset, args.config, overrides)


def _load_dataset(cfg, name):
    try:
        return cfg.dataset(name).load()
    except (ArgumentError, FormatError, EmptyDatasetError, OSError) as exc:
        raise DataProblem(f"{name} dataset: {exc}") from exc


def _load_ckpt(path):
    path = Path(path)
    if not path.is_file():
        raise DataProblem(f"checkpoint {path} not found")
    return load_checkpoint(path)


def _save_aborted(exc: TrainingAborted, out: Path, stage):
    path = out / f"{stage}_last_good.mxgn"
    save_checkpoint(exc.checkpoint, path)
    logger.error("last good checkpoint (epoch %d) written to %s", exc.checkpoint.epoch, path)


def cmd_train_content(cfg, out: Path, args) -> dict:
    data = _load_dataset(cfg, "content")
    logger.info("content data %s, arch %s", data.shape, cfg.arch.to_dict())
    try:
        ckpt = train_content_stage(cfg.train_content, data, cfg.arch)
    except TrainingAborted as exc:
        _save_aborted(exc, out, "content")
        raise
    save_checkpoint(ckpt, out / "content.mxgn")
    write_loss_csv(ckpt.history, out / "content_loss.csv")
    z = sample_latent(cfg.eval.n_grid, cfg.arch.latent_dim, cfg.seed)
    export_images(generate_content(ckpt, z.data), out / "content_samples.png")
    return {"checkpoint": str(out / "content.mxgn"), "epochs": ckpt.epoch}


def cmd_train_mixture(cfg, out: Path, args) -> dict:
    content = _load_ckpt(args.content_ckpt or out / "content.mxgn")
    style = _load_dataset(cfg, "style")
    logger.info("style data %s, resuming from content epoch %d", style.shape, content.epoch)
    try:
        ckpt = train_mixture_stage(cfg.train_mixture, content, style)
    except TrainingAborted as exc:
        _save_aborted(exc, out, "mixture")
        raise
    save_checkpoint(ckpt, out / "mixture.mxgn")
    write_loss_csv(ckpt.history, out / "mixture_loss.csv")
    z = sample_latent(cfg.eval.n_grid, ckpt.arch.latent_dim, cfg.seed)
    gc, g = generate_content(ckpt, z.data), generate_mixture(ckpt, z.data)
    export_pairs(gc, g, out / "pairs.png")
    export_images(g, out / "mixture_samples.png")
    (out / "pairs.json").write_text(json.dumps({"seed": cfg.seed, "n": cfg.eval.n_grid}) + "\n")
    return {"checkpoint": str(out / "mixture.mxgn"), "epochs": ckpt.epoch}


def cmd_generate(cfg, out: Path, args) -> dict:
    if args.n < 1:
        raise ArgumentError(f"--n must be >= 1, got {args.n}")
    ckpt = _load_ckpt(args.ckpt or out / "mixture.mxgn")
    z = sample_latent(args.n, ckpt.arch.latent_dim, cfg.seed)
    files = export_images(generate_mixture(ckpt, z.data), out / "generated.png", individual=True)
    return {"n": args.n, "files": len(files)}


def heldout_corpus(cfg, name, n):
    """Evaluation-only synthetic corpus for ``content``/``style``; None for real data."""
    spec = getattr(cfg, name)
    source, seed, size = spec.get("source"), spec.get("seed"), spec.get("target_size", 32)
    if source == "synthetic_shapes":
        return synth_content_corpus(seed + HELDOUT_SEED_OFFSET, n, size)
    if source == "synthetic_styled":
        return synth_style_corpus(seed + HELDOUT_SEED_OFFSET, n, size)
    return None


def shared_content_iou(content, mixture) -> np.ndarray:
    """Per-pair foreground IoU between content-decoder and mixture images."""
    a, b = foreground_mask(content), foreground_mask(mixture)
    union = (a | b).sum(axis=(1, 2))
    return (a & b).sum(axis=(1, 2)) / np.maximum(union, 1)


def cmd_evaluate(cfg, out: Path, args) -> dict:
    content = _load_dataset(cfg, "content")
    style = _load_dataset(cfg, "style")
    n, seed = cfg.eval.n_samples, cfg.seed
    extra = {"samples": args.samples, "seed": seed}
    if args.samples == "content-data":
        gen = content.data[:n]
    else:
        ckpt = _load_ckpt(args.ckpt or out / "mixture.mxgn")
        z = sample_latent(n, ckpt.arch.latent_dim, seed).data
        gen = generate_content(ckpt, z).data
        if args.samples == "mixture":
            mix = generate_mixture(ckpt, z).data
            iou = shared_content_iou(gen, mix)
            extra["shared_content_iou_median"] = float(np.median(iou))
            extra["shared_content_iou_pass_rate"] = float(np.mean(iou >= 0.5))
            extra["palette_counts"] = np.bincount(palette_of(mix) + 1, minlength=5).tolist()
            gen = mix
    clf = train_domain_classifier(content, style, seed=seed, epochs=cfg.eval.classifier_epochs)
    report = mmd_report(gen, content, style, clf, seed=seed)

    save_classifier(clf, out / "domain_classifier.npz")
    shapes, styles = heldout_corpus(cfg, "content", len(content)), heldout_corpus(cfg, "style", len(style))
    if shapes is not None and styles is not None:
        shape_clf = train_shape_classifier(shapes, styles, seed=seed, epochs=cfg.eval.shape_classifier_epochs)
        save_classifier(shape_clf, out / "shape_classifier.npz")
        report.success_proxy_rate = success_proxy(gen, shape_clf, confidence=cfg.eval.confidence)
        extra["shape_classifier_holdout_accuracy"] = shape_clf.holdout_accuracy_
    else:
        logger.warning("success proxy needs synthetic corpora with shape labels; skipped")

    m = min(n, len(content), len(style))
    feats = np.concatenate([
        extract_features(clf, gen), extract_features(clf, content.data[:m]), extract_features(clf, style.data[:m]),
    ])
    labels = ["generated"] * len(gen) + ["content"] * m + ["style"] * m
    export_features_csv(feats, labels, out / "features.csv")
    plot_embedding(pca_2d(feats), labels, out / "pca.png")
    report.feature_csv, report.pca_png = "features.csv", "pca.png"
    report.extra = extra
    report.to_json(out / "report.json")
    return {"report": str(out / "report.json"), "success_proxy_rate": report.success_proxy_rate}


COMMANDS = {
    "train-content": cmd_train_content,
    "train-mixture": cmd_train_mixture,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=args.log_level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _resolve(args)
        if args.command == "generate" and args.n < 1:
            raise ArgumentError(f"--n must be >= 1, got {args.n}")
    except (ConfigError, ArgumentError) as exc:
        print(f"mixgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.output_dir)
    if args.dry_run:
        plan = {"command": args.command, "output_dir": str(out),
                "outputs": OUTPUTS[args.command], "config": cfg.to_dict()}
        print(json.dumps(plan, indent=2, sort_keys=True))
        return EXIT_OK
    torch.set_num_threads(cfg.threads)
    try:
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](cfg, out, args)
    except (ConfigError, ArgumentError) as exc:
        print(f"mixgan: invalid argument: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonFiniteError as exc:
        print(f"mixgan: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataProblem, FormatError, VersionError, StageError, ShapeError, EmptyDatasetError, IoError, OSError) as exc:
        print(f"mixgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    logger.info("%s done: %s", args.command, summary)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
