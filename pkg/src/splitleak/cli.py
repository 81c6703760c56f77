"""Batch experiment front-end: train, attack, sweep, inspect-tape, plot.

Every command is driven by a flat key=value config file; command-line flags
mirror the config keys and override them. Outputs are deterministic CSV files
(same config and seeds give byte-identical bytes); figures are an optional
rendering of the sweep CSV.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace

import numpy as np

from .attack import (
    AttackInput,
    run_clustering_attack,
    select_anchors,
    write_report_csv,
)
from .data import (
    Dataset,
    ExperimentConfig,
    _parse_value,
    gen_blobs,
    gen_digits,
    load_config_dataset,
    load_config_test_dataset,
    read_config,
    write_results_csv,
)
from .defenses import CompressionDefense, DefenseConfig, NoiseDefense
from .nn import NetworkSpec, accuracy
from .split import (
    TrainingConfig,
    collect_smashed,
    load_model,
    resplit,
    save_model,
    split_at,
    train,
)
from .tape import Tape

SHUFFLE_SALT = 0x9E3779B9

SWEEP_AXES = ("cut", "epoch", "batch", "pca_dim", "noise_sigma", "compression_ratio")
SWEEP_HEADER = ("axis", "value", "source", "attack_accuracy", "model_test_accuracy", "error")


def build_defense(cfg: ExperimentConfig) -> DefenseConfig | None:
    noise = None
    compression = None
    if cfg.noise_sigma is not None or cfg.noise_clip is not None:
        noise = NoiseDefense(
            clip_norm=cfg.noise_clip if cfg.noise_clip is not None else 1.0,
            sigma=cfg.noise_sigma if cfg.noise_sigma is not None else 0.0,
            rng_seed=cfg.noise_seed,
        )
    if cfg.compression_ratio is not None and cfg.compression_ratio > 0:
        compression = CompressionDefense(cfg.compression_ratio)
    if noise is None and compression is None:
        return None
    return DefenseConfig(noise=noise, compression=compression)


def build_training_config(cfg: ExperimentConfig) -> TrainingConfig:
    return TrainingConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch,
        learning_rate=cfg.lr,
        shuffle_seed=cfg.seed ^ SHUFFLE_SALT,
        defense=build_defense(cfg),
    )


def load_test_dataset(cfg: ExperimentConfig) -> Dataset | None:
    """Held-out data: configured IDX test files, or a fresh generator draw."""
    found = load_config_test_dataset(cfg)
    if found is not None:
        return found
    if cfg.dataset == "digits":
        return gen_digits(min(2000, cfg.count), seed=cfg.data_seed + 1)
    if cfg.dataset == "blobs":
        counts = cfg.counts if cfg.counts is not None else tuple([100] * cfg.classes)
        return gen_blobs(cfg.classes, cfg.dim, counts, cfg.centroid_scale,
                         cfg.within_std, seed=cfg.data_seed + 1)
    return None


def run_training(cfg: ExperimentConfig):
    dataset = load_config_dataset(cfg)
    spec = NetworkSpec(cfg.widths, init_seed=cfg.seed)
    model = split_at(spec, cfg.cut)
    model, tape = train(model, dataset, build_training_config(cfg))
    return model, tape, dataset


def _gradient_points(cfg: ExperimentConfig, tape: Tape):
    if not tape.has_gradients:
        raise ValueError("tape has no recorded gradients; use source=smashed")
    view = tape if cfg.pool_epochs else tape.epoch_view(cfg.attack_epoch)
    if len(view) == 0:
        raise ValueError(f"tape has no entries for epoch {cfg.attack_epoch}")
    return view.cut_gradients, view.true_labels, view.sample_ids


def run_attack_from_points(cfg: ExperimentConfig, points, truth, source: str,
                           anchor_free: bool = False):
    k = cfg.widths[-1]
    attack_input = AttackInput(points, source, k)
    if anchor_free:
        prior = np.bincount(np.asarray(truth, dtype=np.int64), minlength=k)
        return run_clustering_attack(attack_input, class_prior=prior,
                                     pca_dim=cfg.pca_dim, truth=truth,
                                     seed=cfg.anchor_seed)
    anchors, _ = select_anchors(points, truth, k, seed=cfg.anchor_seed)
    return run_clustering_attack(attack_input, anchors, pca_dim=cfg.pca_dim, truth=truth)


def cmd_train(cfg: ExperimentConfig, args) -> int:
    if cfg.lr == 0:
        print("warning: lr = 0, model will not learn", file=sys.stderr)
    model, tape, dataset = run_training(cfg)
    full = model.combined()
    print(f"train_accuracy = {accuracy(full, dataset.features, dataset.labels)!r}")
    test = load_test_dataset(cfg)
    if test is not None:
        print(f"test_accuracy = {accuracy(full, test.features, test.labels)!r}")
    if args.tape:
        tape.save(args.tape)
        print(f"tape: {args.tape} ({len(tape)} entries, width {tape.width})")
    if args.model:
        save_model(args.model, model)
        print(f"model: {args.model}")
    return 0


def cmd_attack(cfg: ExperimentConfig, args) -> int:
    if cfg.source == "gradients":
        if not args.tape:
            raise ValueError("source=gradients needs --tape")
        points, truth, sample_ids = _gradient_points(cfg, Tape.load(args.tape))
    else:
        if not args.model:
            raise ValueError("source=smashed needs --model")
        model = load_model(args.model)
        cut = cfg.attack_cut if cfg.attack_cut is not None else model.cut_index
        smash_tape = collect_smashed(resplit(model.combined(), cut),
                                     load_config_dataset(cfg))
        points, truth, sample_ids = (smash_tape.smashed, smash_tape.true_labels,
                                     smash_tape.sample_ids)
    report = run_attack_from_points(cfg, points, truth, cfg.source,
                                    anchor_free=args.anchor_free)
    if args.out:
        write_report_csv(args.out, report, sample_ids)
    summary = report.summary()
    print(json.dumps(summary, sort_keys=True))
    if args.summary:
        with open(args.summary, "w") as f:
            json.dump(summary, f, sort_keys=True, indent=2)
    return 0


def _sweep_arm_config(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    if axis == "cut":
        return replace(cfg, cut=int(value))
    if axis == "epoch":
        return replace(cfg, epochs=int(value), attack_epoch=int(value) - 1)
    if axis == "batch":
        return replace(cfg, batch=int(value))
    if axis == "pca_dim":
        return replace(cfg, pca_dim=int(value))
    if axis == "noise_sigma":
        clip = cfg.noise_clip if cfg.noise_clip is not None else 1.0
        return replace(cfg, noise_clip=clip, noise_sigma=float(value))
    if axis == "compression_ratio":
        return replace(cfg, compression_ratio=float(value))
    raise ValueError(f"unknown sweep axis {axis!r} (expected one of {SWEEP_AXES})")


def run_sweep_arm(cfg: ExperimentConfig, axis: str, value: str) -> list[tuple]:
    arm = _sweep_arm_config(cfg, axis, value)
    model, tape, dataset = run_training(arm)
    test = load_test_dataset(arm)
    full = model.combined()
    if test is not None:
        model_acc = accuracy(full, test.features, test.labels)
    else:
        model_acc = accuracy(full, dataset.features, dataset.labels)
    rows = []
    points, truth, _ = _gradient_points(arm, tape)
    grad_report = run_attack_from_points(arm, points, truth, "gradients")
    rows.append((axis, value, "gradients", grad_report.accuracy, model_acc, ""))
    smash_cut = arm.attack_cut if arm.attack_cut is not None else arm.cut
    smash_tape = collect_smashed(resplit(full, smash_cut), dataset)
    smash_report = run_attack_from_points(arm, smash_tape.smashed,
                                          smash_tape.true_labels, "smashed")
    rows.append((axis, value, "smashed", smash_report.accuracy, model_acc, ""))
    return rows


def cmd_sweep(cfg: ExperimentConfig, args) -> int:
    values = [v for v in args.values.split(",") if v.strip()]
    if not values:
        raise ValueError("sweep needs at least one value")
    all_rows = []
    failed = False
    for value in values:
        try:
            all_rows.extend(run_sweep_arm(cfg, args.axis, value))
        except Exception as exc:  # a failed arm records an error row and continues
            failed = True
            all_rows.append((args.axis, value, "", "", "", str(exc)))
    all_rows.sort(key=lambda r: (str(r[1]), str(r[2])))
    write_results_csv(args.out, SWEEP_HEADER, all_rows)
    print(f"sweep: {args.out} ({len(all_rows)} rows)")
    if args.figure:
        from .figures import render_sweep_figure

        render_sweep_figure(args.out, args.figure)
        print(f"figure: {args.figure}")
    return 1 if failed else 0


def cmd_inspect_tape(args) -> int:
    tape = Tape.load(args.path)
    print(f"entries = {len(tape)}")
    print(f"cut_width = {tape.width}")
    print(f"has_gradients = {tape.has_gradients}")
    if len(tape):
        print(f"epochs = {int(tape.epochs.min())}..{int(tape.epochs.max())}")
        hist = np.bincount(tape.true_labels)
        print("label_counts = " + ",".join(str(int(c)) for c in hist))
    if args.export_csv:
        tape.export_csv(args.export_csv)
        print(f"csv: {args.export_csv}")
    return 0


def cmd_plot(args) -> int:
    from .figures import render_sweep_figure

    render_sweep_figure(args.path, args.out, title=args.title)
    print(f"figure: {args.out}")
    return 0


def _add_config_overrides(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key = value experiment config file")
    for fld in fields(ExperimentConfig):
        parser.add_argument(f"--{fld.name.replace('_', '-')}", dest=f"cfg_{fld.name}",
                            metavar="V", help=argparse.SUPPRESS)


def _resolve_config(args) -> ExperimentConfig:
    cfg = read_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for fld in fields(ExperimentConfig):
        raw = getattr(args, f"cfg_{fld.name}", None)
        if raw is not None:
            overrides[fld.name] = _parse_value(fld.name, raw)
    return replace(cfg, **overrides) if overrides else cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitleak",
        description="Split-learning simulator and label-inference attack toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run split training, write tape and model")
    _add_config_overrides(p_train)
    p_train.add_argument("--tape", help="output tape file")
    p_train.add_argument("--model", help="output model snapshot (.npz)")

    p_attack = sub.add_parser("attack", help="run the clustering attack, write report CSV")
    _add_config_overrides(p_attack)
    p_attack.add_argument("--tape", help="input tape (source=gradients)")
    p_attack.add_argument("--model", help="input model snapshot (source=smashed)")
    p_attack.add_argument("--out", help="per-sample report CSV")
    p_attack.add_argument("--summary", help="JSON summary file")
    p_attack.add_argument("--anchor-free", action="store_true",
                          help="map clusters by class prior instead of anchors")

    p_sweep = sub.add_parser("sweep", help="train+attack across one axis, write long CSV")
    _add_config_overrides(p_sweep)
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--out", required=True, help="output CSV")
    p_sweep.add_argument("--figure", help="also render the sweep as a figure file")

    p_inspect = sub.add_parser("inspect-tape", help="print tape header and stats")
    p_inspect.add_argument("path")
    p_inspect.add_argument("--export-csv", help="write the lossless CSV form")

    p_plot = sub.add_parser("plot", help="render a sweep CSV as a figure file")
    p_plot.add_argument("path")
    p_plot.add_argument("--out", required=True)
    p_plot.add_argument("--title")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "train":
            return cmd_train(_resolve_config(args), args)
        if args.command == "attack":
            return cmd_attack(_resolve_config(args), args)
        if args.command == "sweep":
            return cmd_sweep(_resolve_config(args), args)
        if args.command == "inspect-tape":
            return cmd_inspect_tape(args)
        if args.command == "plot":
            return cmd_plot(args)
        raise ValueError(f"unknown command {args.command!r}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
