"""Command-line front end: generate / train / eval / sweep."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .dataset import build_windows, load_dataset, save_dataset, split
from .errors import ConfigError, CoopbeamError
from .metrics import evaluate, format_summary, write_metrics_csv
from .model import CrsModel, ModelConfig, ModelDims
from .scenario import resolve_scenario
from .sweeps import (
    ExperimentSpec,
    ablate_gate,
    check_dims,
    compare_warmup,
    format_rows,
    sweep_fraction,
    sweep_snr,
    transfer_eval,
    write_rows_csv,
)
from .train import TrainConfig, run_training

SWEEP_KINDS = ("snr", "fraction", "ablation", "transfer", "warmup")


def parse_snr(text: str):
    """'clean' -> no noise, 'mixed' -> per-trajectory draw, else dB float."""
    low = text.strip().lower()
    if low in ("clean", "none", "inf"):
        return None
    if low == "mixed":
        return "mixed"
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"--snr must be a dB value, 'mixed', or 'clean'; got {text!r}")


def parse_ks(text: str) -> tuple:
    try:
        ks = tuple(int(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"--k expects comma-separated integers, got {text!r}")
    if not ks:
        raise ConfigError("--k parsed to an empty list")
    return ks


def parse_floats(text: str) -> tuple:
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}")


def read_kv_config(path) -> dict:
    """Flat `key = value` file with # comments; free keys, no duplicates."""
    out: dict[str, str] = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}")
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{ln}: expected `key = value`, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in out:
            raise ConfigError(f"{path}:{ln}: duplicate key {key!r}")
        out[key] = value
    return out


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coopbeam",
        description="Multi-BS beam prediction: simulate, train, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="simulate trajectories into a dataset file")
    gen.add_argument("--scenario", required=True,
                     help="preset name (umi_like, uma_like) or scenario file")
    gen.add_argument("--out", required=True, help="output dataset path (.cbw)")
    gen.add_argument("--snr", default="10", help="dB value, 'mixed', or 'clean'")
    gen.add_argument("--trajectories", type=int, default=20)
    gen.add_argument("--slots", type=int, default=120)
    gen.add_argument("--seed", type=int, default=None,
                     help="override the scenario seed")
    gen.add_argument("--audit-fraction", type=float, default=0.05)

    tr = sub.add_parser("train", help="train a model on a dataset file")
    tr.add_argument("--data", required=True, help="training dataset (.cbw)")
    tr.add_argument("--val-data", required=True, help="validation dataset (.cbw)")
    tr.add_argument("--out", required=True, help="output checkpoint path (.cbp)")
    tr.add_argument("--history", default=None, help="per-epoch CSV log path")
    tr.add_argument("--lr", type=float, default=1e-3)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--epochs-stage0", type=int, default=5)
    tr.add_argument("--epochs-stage1", type=int, default=15)
    tr.add_argument("--lambda-sw", type=float, default=0.5)
    tr.add_argument("--mask-ratio", type=float, default=0.15)
    tr.add_argument("--no-warmup", action="store_true",
                    help="skip the masked warm-up stage")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--head", default="switch",
                    choices=("switch", "ungated", "hierarchical"))
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--d", type=int, default=64)
    tr.add_argument("--d-c", type=int, default=32)
    tr.add_argument("--heads", type=int, default=4)
    tr.add_argument("--rank", type=int, default=8)
    tr.add_argument("--frozen-backbone", action="store_true")

    ev = sub.add_parser("eval", help="score a checkpoint on a dataset file")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--k", default="1,2,3,5", help="comma-separated Top-K list")
    ev.add_argument("--regime", action="store_true",
                    help="print the stable/flip breakdown too")
    ev.add_argument("--out", default=None, help="also write metrics CSV here")

    sw = sub.add_parser("sweep", help="run an experiment harness from a config file")
    sw.add_argument("--kind", required=True, choices=SWEEP_KINDS)
    sw.add_argument("--config", required=True, help="flat key = value config file")
    return parser


def cmd_generate(args) -> int:
    cfg = resolve_scenario(args.scenario)
    snr = parse_snr(args.snr)
    ds = build_windows(
        cfg, args.trajectories, args.slots, snr,
        seed=args.seed, audit_fraction=args.audit_fraction,
    )
    save_dataset(ds, args.out)
    size_mb = Path(args.out).stat().st_size / 1e6
    print(f"wrote {ds.n_windows} windows ({ds.flip_fraction():.3f} flip fraction) "
          f"to {args.out} ({size_mb:.1f} MB)")
    return 0


def cmd_train(args) -> int:
    train_ds = load_dataset(args.data)
    val_ds = load_dataset(args.val_data)
    # same physics required; the generation seed may legitimately differ
    if (replace(train_ds.cfg, seed=0).content_hash()
            != replace(val_ds.cfg, seed=0).content_hash()):
        raise ConfigError("train and validation datasets use different scenarios")
    model_cfg = ModelConfig(
        d_c=args.d_c, d=args.d, n_layers=args.layers, n_heads=args.heads,
        rank_r=args.rank, frozen_backbone=args.frozen_backbone, head=args.head,
    )
    model = CrsModel(ModelDims.from_scenario(train_ds.cfg), model_cfg, seed=args.seed)
    train_cfg = TrainConfig(
        lr=args.lr, batch_size=args.batch_size,
        epochs_stage0=args.epochs_stage0, epochs_stage1=args.epochs_stage1,
        lambda_sw=args.lambda_sw, mask_ratio=args.mask_ratio,
        warmup_enabled=not args.no_warmup, seed=args.seed,
    )
    result = run_training(
        model, train_ds, val_ds, train_cfg,
        ckpt_path=args.out, history_path=args.history, log=print,
    )
    print(f"saved best checkpoint (epoch {result.best_epoch}, "
          f"val NBG-1 {result.best_val_nbg1:.4f}) to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = CrsModel.from_checkpoint(args.ckpt)
    ds = load_dataset(args.data)
    check_dims(model, ds)
    report = evaluate(model, ds, ks=parse_ks(args.k),
                      metadata={"ckpt": args.ckpt, "data": args.data})
    if args.regime:
        print(format_summary(report))
    else:
        acc = "  ".join(f"acc@{k} {report.acc['overall'][k]:.4f}" for k in report.ks)
        nbg = "  ".join(f"nbg@{k} {report.nbg['overall'][k]:.4f}" for k in report.ks)
        print(f"samples {report.n_samples}\n{acc}\n{nbg}")
    if args.out:
        write_metrics_csv(args.out, report)
        print(f"wrote metrics to {args.out}")
    return 0


def _spec_from_config(conf: dict) -> ExperimentSpec:
    scenario = resolve_scenario(conf.get("scenario", "umi_like"))
    spec = ExperimentSpec(scenario=scenario)
    if "trajectories" in conf:
        spec.n_trajectories = int(conf["trajectories"])
    if "slots" in conf:
        spec.n_slots = int(conf["slots"])
    if "snr" in conf:
        spec.snr_db = parse_snr(conf["snr"])
    if "seed" in conf:
        spec.seed = int(conf["seed"])
    if "split" in conf:
        spec.split_fractions = parse_floats(conf["split"])
    model_keys = {
        "layers": ("n_layers", int),
        "d": ("d", int),
        "d_c": ("d_c", int),
        "heads": ("n_heads", int),
        "rank": ("rank_r", int),
        "head": ("head", str),
    }
    model_updates = {}
    for key, (attr, cast) in model_keys.items():
        if key in conf:
            model_updates[attr] = cast(conf[key])
    if model_updates:
        spec.model = replace(spec.model, **model_updates)
    train_keys = {
        "lr": ("lr", float),
        "batch_size": ("batch_size", int),
        "epochs_stage0": ("epochs_stage0", int),
        "epochs_stage1": ("epochs_stage1", int),
        "lambda_sw": ("lambda_sw", float),
        "mask_ratio": ("mask_ratio", float),
    }
    updates = {}
    for key, (attr, cast) in train_keys.items():
        if key in conf:
            updates[attr] = cast(conf[key])
    if "warmup" in conf:
        updates["warmup_enabled"] = conf["warmup"].lower() in ("1", "true", "yes")
    if updates:
        spec.train = replace(spec.train, **updates)
    return spec


def cmd_sweep(args) -> int:
    conf = read_kv_config(args.config)
    spec = _spec_from_config(conf)
    out = conf.get("out", f"sweep_{args.kind}.csv")

    if args.kind == "snr":
        if "ckpt" not in conf:
            raise ConfigError("snr sweep config needs `ckpt`")
        model = CrsModel.from_checkpoint(conf["ckpt"])
        snrs = parse_floats(conf.get("snrs", "-10,0,10,20"))
        rows = sweep_snr(model, spec, snrs, log=print)
    elif args.kind == "fraction":
        fractions = parse_floats(conf.get("fractions", "0.25,0.5,1.0"))
        rows = sweep_fraction(spec, fractions, log=print)
    elif args.kind == "ablation":
        seeds = tuple(int(s) for s in parse_floats(conf.get("seeds", "42,43,44")))
        rows, verdict = ablate_gate(spec, seeds, log=print)
        print(f"gated mean acc2 {verdict['gated_mean_acc2']:.4f} vs "
              f"ungated {verdict['ungated_mean_acc2']:.4f} "
              f"(gated >= ungated: {verdict['gated_ge_ungated']})")
    elif args.kind == "transfer":
        if "ckpt" not in conf:
            raise ConfigError("transfer config needs `ckpt`")
        model = CrsModel.from_checkpoint(conf["ckpt"])
        target = resolve_scenario(conf.get("scenario_b", "uma_like"))
        ds = build_windows(
            target, spec.n_trajectories, spec.n_slots, spec.snr_db, seed=spec.seed
        )
        report = transfer_eval(model, ds, metadata={"scenario_b": target.content_hash()})
        print(format_summary(report))
        write_metrics_csv(out, report)
        print(f"wrote metrics to {out}")
        return 0
    else:  # warmup
        if spec.train.epochs_stage0 < 1:
            spec.train = replace(spec.train, epochs_stage0=5)
        rows, verdict = compare_warmup(spec, log=print)
        print(f"warm best val NBG-1 {verdict['warm']['best_val_nbg1']:.4f} vs "
              f"cold {verdict['cold']['best_val_nbg1']:.4f}")

    write_rows_csv(out, rows)
    print(format_rows(rows))
    print(f"wrote table to {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {
        "generate": cmd_generate,
        "train": cmd_train,
        "eval": cmd_eval,
        "sweep": cmd_sweep,
    }
    try:
        return handlers[args.command](args)
    except CoopbeamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
