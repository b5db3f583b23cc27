"""Command-line surface.

Subcommands: train, eval, ablate, noise-sweep, sample, preprocess,
synth-data.  Common flags: --config (JSON run config), --set key=value
overrides, --seed, --out.  The default output root comes from
$DAAE_OUT_ROOT (falling back to ./runs).

Every run directory receives the exact flat config it ran with
(config.json), its hash, a JSONL step log, and per-epoch checkpoints, so
a run is reproducible from the directory alone.
"""

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import checkpoint as ckpt
from . import data as dp
from . import metrics
from .config import RunConfig, config_hash, config_to_flat, load_config, save_config
from .errors import ConfigError, DaaeError, ProtocolError
from .models import VARIANT_KINDS, build_variant, canonical_kind, generate
from .training import train

SWEEP_SIGMAS = (0.0, 0.01, 0.05, 0.1, 0.25, 0.5, 1.0)


def out_root():
    return Path(os.environ.get("DAAE_OUT_ROOT", "runs"))


def prepare_splits(cfg):
    """Materialize the four splits from a dataset directory or the synthetic
    generator, applying optional augmentation to the training-side splits."""
    d = cfg.data
    if d.synth_n_per_class > 0:
        corpus = dp.synth_generate(dp.SynthSpec(n_per_class=d.synth_n_per_class, seed=cfg.seed))
        splits = dp.split(
            corpus,
            dp.SplitSpec(d.n_unlabelled, d.n_labelled_train, d.n_val, d.n_test, seed=cfg.seed),
        )
    elif d.dataset_dir:
        splits, _ = dp.load_dataset(d.dataset_dir)
    else:
        raise ConfigError("config needs data.dataset_dir or data.synth_n_per_class > 0")
    if d.augment:
        splits["labelled_train"] = dp.augment(splits["labelled_train"], seed=cfg.seed)
        if len(splits.get("unlabelled", [])) > 0:
            splits["unlabelled"] = dp.augment(splits["unlabelled"], seed=cfg.seed + 1)
    return splits


def shared_hyperparameter_hash(cfg):
    """Hash of everything the six ablation variants share (variant masked)."""
    shared = dataclasses.replace(cfg, variant="ALL", out_dir="")
    return config_hash(shared)


def run_one_training(cfg, splits, run_dir):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.json")
    (run_dir / "config_hash.txt").write_text(config_hash(cfg) + "\n")
    model = build_variant(cfg.variant, sigma=cfg.train.sigma, seed=cfg.seed)
    result = train(
        model, splits, cfg.train, run_dir=run_dir, checkpoint_every=cfg.checkpoint_every
    )
    return model, result


def evaluate_to_files(model, dataset, out_dir, name, thresholds=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if thresholds is None:
        report = metrics.evaluate(model, dataset, provenance=name)
    else:
        scores = metrics.predict_scores(model, dataset.images)
        scored = metrics.ScoredSet(scores, dataset.labels, provenance=name)
        report = metrics.apply_thresholds(scored, thresholds, provenance=name)
    metrics.write_report_csv(report, out_dir / f"{name}_metrics.csv")
    metrics.write_scores_csv(report.scored, dataset.ids, out_dir / f"{name}_scores.csv")
    return report


# -- subcommands ----------------------------------------------------------------


def cmd_train(args):
    cfg = _config_from_args(args)
    run_dir = Path(args.out) if args.out else out_root() / f"train_{cfg.variant}_seed{cfg.seed}"
    splits = prepare_splits(cfg)
    model, result = run_one_training(cfg, splits, run_dir)
    if "test" in splits and result.best_epoch >= 0:
        report = evaluate_to_files(model, splits["test"], run_dir, "test")
        print(f"test specificity@0.95 = {report.specificity_at(0.95):.4f} (auc {report.auc:.4f})")
    print(f"run directory: {run_dir}")
    return 0


def cmd_eval(args):
    model, _, _, manifest = ckpt.load_checkpoint(args.checkpoint)
    splits, _ = dp.load_dataset(args.data)
    if args.split not in splits:
        raise ConfigError(f"dataset has no split {args.split!r}")
    dataset = splits[args.split]
    out_dir = Path(args.out) if args.out else out_root() / "eval"
    thresholds = None
    if args.threshold_split:
        sel = splits[args.threshold_split]
        scored = metrics.ScoredSet(
            metrics.predict_scores(model, sel.images), sel.labels, provenance=args.threshold_split
        )
        thresholds = [
            (t, metrics.specificity_at_sensitivity(scored, t)[0])
            for t in metrics.DEFAULT_SENSITIVITY_TARGETS
        ]
    report = evaluate_to_files(model, dataset, out_dir, args.split, thresholds=thresholds)
    for target, thr, sens, spec in report.rows:
        print(f"sensitivity>={target}: threshold={thr:.4f} sensitivity={sens:.4f} specificity={spec:.4f}")
    print(f"auc={report.auc:.4f}")
    return 0


def cmd_ablate(args):
    cfg = _config_from_args(args)
    root = Path(args.out) if args.out else out_root() / "ablation"
    root.mkdir(parents=True, exist_ok=True)
    splits = prepare_splits(cfg)
    shared_hash = shared_hyperparameter_hash(cfg)
    (root / "shared_hash.txt").write_text(shared_hash + "\n")

    rows, failures = [], []
    for kind in VARIANT_KINDS:
        run_cfg = dataclasses.replace(cfg, variant=kind)
        run_dir = root / kind.replace("+", "_")
        try:
            model, result = run_one_training(run_cfg, splits, run_dir)
            (run_dir / "shared_hash.txt").write_text(shared_hash + "\n")
            report = evaluate_to_files(model, splits["test"], run_dir, "test")
            for target, thr, sens, spec in report.rows:
                rows.append((kind, target, thr, sens, spec))
        except DaaeError as exc:  # preserve partial results, then abort
            failures.append((kind, str(exc)))
            break
    _write_ablation_csv(root / "ablation.csv", rows)
    if failures:
        kind, msg = failures[0]
        print(f"ablation aborted at variant {kind}: {msg}", file=sys.stderr)
        print(f"partial results preserved in {root}", file=sys.stderr)
        return 1
    print(f"ablation table: {root / 'ablation.csv'} ({len(rows)} rows)")
    return 0


def _write_ablation_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "sensitivity_target", "threshold", "sensitivity", "specificity"])
        for row in rows:
            writer.writerow(row)


def cmd_noise_sweep(args):
    cfg = _config_from_args(args)
    if canonical_kind(cfg.variant) != "ssdaae":
        raise ConfigError("the corruption sweep trains ssdaae models")
    sigmas = [float(s) for s in args.sigmas.split(",")] if args.sigmas else list(SWEEP_SIGMAS)
    root = Path(args.out) if args.out else out_root() / "noise_sweep"
    root.mkdir(parents=True, exist_ok=True)
    splits = prepare_splits(cfg)

    rows, failures = [], []
    for sigma in sigmas:
        run_cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, sigma=sigma)
        )
        run_dir = root / f"sigma_{sigma:g}"
        try:
            model, result = run_one_training(run_cfg, splits, run_dir)
            report = evaluate_to_files(model, splits["test"], run_dir, "test")
            for target, _, _, spec in report.rows:
                rows.append((sigma, target, spec))
        except DaaeError as exc:
            failures.append((sigma, str(exc)))
            break
    with open(root / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sigma", "sensitivity_target", "specificity"])
        for row in rows:
            writer.writerow(row)
    if failures:
        sigma, msg = failures[0]
        print(f"sweep aborted at sigma={sigma}: {msg}", file=sys.stderr)
        print(f"partial results preserved in {root}", file=sys.stderr)
        return 1
    print(f"sweep table: {root / 'sweep.csv'} ({len(rows)} rows)")
    return 0


def image_grid(images):
    """Tile [N,3,H,W] float images into one uint8 RGB grid array."""
    n, _, h, w = images.shape
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    grid = np.ones((rows * h, cols * w, 3), dtype=np.float32)
    for i in range(n):
        r, c = divmod(i, cols)
        grid[r * h : (r + 1) * h, c * w : (c + 1) * w] = images[i].transpose(1, 2, 0)
    return (np.clip(grid, 0, 1) * 255).astype(np.uint8)


def cmd_sample(args):
    model, _, _, _ = ckpt.load_checkpoint(args.checkpoint)
    if not model.uses_autoencoder:
        raise ProtocolError(f"checkpoint holds a {model.kind} classifier; nothing to sample")
    out_dir = Path(args.out) if args.out else out_root() / "samples"
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [0, 1] if args.label == "both" else [args.label]
    for label in labels:
        want = label if label == "random" else int(label)
        images = generate(model, args.n, label=want, seed=args.seed)
        name = f"samples_label{label}_seed{args.seed}.png"
        Image.fromarray(image_grid(images)).save(out_dir / name)
        print(f"wrote {out_dir / name}")
    return 0


def cmd_preprocess(args):
    cfg = _config_from_args(args)
    out_dir = Path(args.out) if args.out else out_root() / "dataset"
    preprocess = None if args.no_patch_removal else dp.remove_identifier_patch
    dataset, stats = dp.ingest(args.images, args.labels, preprocess=preprocess)
    splits = dp.split(
        dataset,
        dp.SplitSpec(
            cfg.data.n_unlabelled, cfg.data.n_labelled_train, cfg.data.n_val, cfg.data.n_test,
            seed=cfg.seed,
        ),
    )
    if cfg.data.augment:
        splits["labelled_train"] = dp.augment(splits["labelled_train"], seed=cfg.seed)
        splits["unlabelled"] = dp.augment(splits["unlabelled"], seed=cfg.seed + 1)
    manifest = dp.write_dataset(
        out_dir,
        splits,
        extra_manifest={
            "source": str(args.images),
            "ingest_stats": stats,
            "patch_removal": not args.no_patch_removal,
            "seed": cfg.seed,
        },
    )
    print(f"dataset written: {manifest} (skipped {stats['skipped']}, rejected {stats['rejected']})")
    return 0


def cmd_synth_data(args):
    cfg = _config_from_args(args)
    n = args.n_per_class or cfg.data.synth_n_per_class
    if n <= 0:
        raise ConfigError("synth-data needs --n-per-class > 0")
    out_dir = Path(args.out) if args.out else out_root() / "synth_dataset"
    corpus = dp.synth_generate(dp.SynthSpec(n_per_class=n, seed=cfg.seed))
    splits = dp.split(
        corpus,
        dp.SplitSpec(
            cfg.data.n_unlabelled, cfg.data.n_labelled_train, cfg.data.n_val, cfg.data.n_test,
            seed=cfg.seed,
        ),
    )
    manifest = dp.write_dataset(
        out_dir, splits, extra_manifest={"generator": "synthetic", "n_per_class": n, "seed": cfg.seed}
    )
    print(f"dataset written: {manifest}")
    return 0


# -- argument plumbing ----------------------------------------------------------


def _config_from_args(args):
    overrides = list(args.set or [])
    if getattr(args, "variant", None):
        overrides.append(f"variant={args.variant}")
    if getattr(args, "epochs", None) is not None:
        overrides.append(f"train.epochs={args.epochs}")
    if getattr(args, "sigma", None) is not None:
        overrides.append(f"train.sigma={args.sigma}")
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
        overrides.append(f"train.seed={args.seed}")
    if getattr(args, "synth", None) is not None:
        n = args.synth
        overrides.append(f"data.synth_n_per_class={n}")
        explicit = {o.split("=", 1)[0] for o in (args.set or [])}
        # shrink default split sizes to fit a small synthetic corpus
        if not explicit & {"data.n_unlabelled", "data.n_labelled_train", "data.n_val", "data.n_test"}:
            overrides.append(f"data.n_unlabelled={n}")
            overrides.append(f"data.n_labelled_train={max(16, n // 4)}")
            overrides.append(f"data.n_val={max(16, n // 4)}")
            overrides.append(f"data.n_test={max(16, n // 4)}")
    return load_config(getattr(args, "config", None), overrides)


def _add_common(parser, train_flags=False):
    parser.add_argument("--config", help="JSON run config (flat or nested keys)")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key path (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--out", help="output directory (default under $DAAE_OUT_ROOT)")
    if train_flags:
        variant_names = sorted({k.replace("+", "-") for k in VARIANT_KINDS} | set(VARIANT_KINDS))
        parser.add_argument("--variant", choices=variant_names, help="model variant")
        parser.add_argument("--epochs", type=int, default=None)
        parser.add_argument("--sigma", type=float, default=None, help="corruption level")
        parser.add_argument("--synth", type=int, default=None, metavar="N",
                            help="use a synthetic corpus with N images per class")


def build_parser():
    parser = argparse.ArgumentParser(prog="daae",
        description="Denoising adversarial autoencoders for binary lesion classification")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant")
    _add_common(p, train_flags=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="prepared dataset directory")
    p.add_argument("--split", default="test")
    p.add_argument("--threshold-split", default=None,
                   help="select thresholds on this split, apply to --split")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all six variants")
    _add_common(p, train_flags=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("noise-sweep", help="train ssdaae across corruption levels")
    _add_common(p, train_flags=True)
    p.add_argument("--sigmas", help="comma-separated sigma list "
                   f"(default {','.join(str(s) for s in SWEEP_SIGMAS)})")
    p.set_defaults(fn=cmd_noise_sweep)

    p = sub.add_parser("sample", help="decode prior draws from a checkpoint into a PNG grid")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--label", default="random", choices=["0", "1", "random", "both"])
    p.set_defaults(fn=cmd_sample)

    p = sub.add_parser("preprocess", help="ingest raw images into a dataset directory")
    _add_common(p)
    p.add_argument("--images", required=True, help="directory of PNG/JPEG files")
    p.add_argument("--labels", required=True, help="CSV with header id,label")
    p.add_argument("--no-patch-removal", action="store_true",
                   help="plain center-crop resize instead of identifier-patch removal")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("synth-data", help="generate a synthetic dataset directory")
    _add_common(p)
    p.add_argument("--n-per-class", type=int, default=0)
    p.set_defaults(fn=cmd_synth_data)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = 0
    try:
        return args.fn(args)
    except DaaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
