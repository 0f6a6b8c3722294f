"""Command-line entry point: gen-data / train / eval / snr-sweep / transfer.

Every command resolves its full configuration (defaults, then an optional
--config JSON snapshot, then explicit flags), writes the resolved snapshot
into the output directory before any computation, and is reproducible from
that snapshot alone.  When --out is omitted the run root comes from the
BURSTNET_RUN_ROOT environment variable.
"""

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .acars import AcarsError
from .adsb import AdsbError
from .dataset import DatasetConfig, DatasetError, generate_dataset, load_all, \
    load_manifest, split, to_tensor
from .evaluation import per_category_report, snr_sweep
from .model import CheckpointError, build_model, default_network_spec, \
    load_checkpoint, save_checkpoint, small_network_spec
from .training import DivergenceError, TrainConfig, TrainingCurve, train
from .transfer import TransferError, TransferExperimentConfig, run_transfer_experiment

RUN_ROOT_ENV = "BURSTNET_RUN_ROOT"

_ERRORS = (DatasetError, AcarsError, AdsbError, TransferError, CheckpointError,
           DivergenceError, ValueError, OSError)


class CliError(ValueError):
    pass


def _log(msg: str):
    print(msg, flush=True)


def _resolve_out(given, command: str) -> Path:
    if given is not None:
        return Path(given)
    root = os.environ.get(RUN_ROOT_ENV)
    if not root:
        raise CliError(f"--out not given and {RUN_ROOT_ENV} is not set")
    return Path(root) / command


def _merge_config(defaults: dict, config_path, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags (argparse.SUPPRESS keeps only
    flags the user actually passed)."""
    cfg = dict(defaults)
    if config_path is not None:
        loaded = json.loads(Path(config_path).read_text())
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise CliError(f"unknown keys in config snapshot: {sorted(unknown)}")
        cfg.update(loaded)
    explicit = {k: v for k, v in vars(args).items() if k in defaults}
    cfg.update(explicit)
    return cfg


def _write_snapshot(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, sort_keys=True, indent=2) + "\n")


def _csv_floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# --- gen-data ---

GEN_DEFAULTS = {
    "kind": None,
    "classes": 20,
    "per_class": [250, 250],
    "test_per_class": 50,
    "sample_len": 1024,
    "sample_rate": None,
    "snr_range": None,
    "interference_prob": 0.0,
    "interference_power_db": 10.0,
    "text_len": None,
    "seed": 0,
}


def cmd_gen_data(args) -> int:
    out = _resolve_out(args.out, "gen-data")
    cfg = _merge_config(GEN_DEFAULTS, args.config, args)
    if cfg["kind"] is None:
        raise CliError("--kind is required (acars or adsb)")
    if (out / "manifest.json").exists() and not args.force:
        raise CliError(f"dataset already exists at {out}; pass --force to regenerate")
    ds_config = DatasetConfig(
        burst_kind=cfg["kind"],
        num_classes=cfg["classes"],
        per_class_range=tuple(cfg["per_class"]),
        test_per_class=cfg["test_per_class"],
        sample_len=cfg["sample_len"],
        seed=cfg["seed"],
        sample_rate_hz=cfg["sample_rate"],
        snr_range_db=None if cfg["snr_range"] is None else tuple(cfg["snr_range"]),
        interference_prob=cfg["interference_prob"],
        interference_power_db=cfg["interference_power_db"],
        text_len=cfg["text_len"],
    )
    _write_snapshot(cfg, out)
    manifest = generate_dataset(ds_config, out)
    _log(f"wrote {manifest.burst_kind} dataset: {manifest.num_classes} classes, "
         f"{manifest.total_samples} bursts of {manifest.sample_len} samples -> {out}")
    return 0


# --- train ---

TRAIN_DEFAULTS = {
    "data": None,
    "network": "default",
    "network_seed": 0,
    "seed": 0,
    "learning_rate": None,     # None -> regime default
    "momentum": 0.9,
    "batch_size": None,        # None -> regime default
    "max_iters": None,
    "validate_every": None,
    "weight_decay": 0.0,
    "checkpoint_every": 0,
    "augment_snr": None,       # [lo_db, hi_db] train-time AWGN exposure
    "augment_prob": 0.5,
    "full_scale": False,
}

_REGIMES = {
    # batch_size, max_iters, validate_every, learning_rate
    True: (190, 101_250, 1_350, 0.01),   # full-scale
    False: (32, 5_000, 250, 0.03),       # desk-scale
}


def _resolve_train_config(cfg: dict) -> TrainConfig:
    batch, max_it, val_every, lr = _REGIMES[bool(cfg["full_scale"])]
    return TrainConfig(
        learning_rate=lr if cfg["learning_rate"] is None else cfg["learning_rate"],
        momentum=cfg["momentum"],
        batch_size=batch if cfg["batch_size"] is None else cfg["batch_size"],
        max_iterations=max_it if cfg["max_iters"] is None else cfg["max_iters"],
        validate_every=val_every if cfg["validate_every"] is None else cfg["validate_every"],
        weight_decay=cfg["weight_decay"],
        checkpoint_every=cfg["checkpoint_every"],
        seed=cfg["seed"],
        augment_snr_range=None if cfg["augment_snr"] is None
        else tuple(cfg["augment_snr"]),
        augment_prob=cfg["augment_prob"],
    )


def _latest_checkpoint(run_dir: Path) -> Path:
    ckpt_dir = run_dir / "checkpoints"
    periodic = sorted(ckpt_dir.glob("iter_*.ckpt")) if ckpt_dir.is_dir() else []
    if periodic:
        return periodic[-1]
    final = ckpt_dir / "final.ckpt"
    if final.exists():
        return final
    raise CliError(f"no checkpoint to resume from under {ckpt_dir}")


def cmd_train(args) -> int:
    out = _resolve_out(args.out, "train")
    config_path = args.config
    if args.resume and config_path is None:
        config_path = out / "config.json"
        if not config_path.exists():
            raise CliError(f"--resume needs the original snapshot at {config_path}")
    cfg = _merge_config(TRAIN_DEFAULTS, config_path, args)
    if cfg["data"] is None:
        raise CliError("--data is required")
    if cfg["network"] not in ("default", "small"):
        raise CliError(f"unknown network {cfg['network']!r}")
    # expand regime values so the snapshot is complete on its own
    train_config = _resolve_train_config(cfg)
    cfg["batch_size"] = train_config.batch_size
    cfg["max_iters"] = train_config.max_iterations
    cfg["validate_every"] = train_config.validate_every
    cfg["learning_rate"] = train_config.learning_rate

    manifest = load_manifest(cfg["data"])
    make_spec = default_network_spec if cfg["network"] == "default" else small_network_spec
    spec = make_spec(manifest.num_classes, manifest.sample_len)

    start_iteration, velocity, curve = 0, None, None
    if args.resume:
        ckpt = load_checkpoint(_latest_checkpoint(out))
        if ckpt.spec != spec:
            raise CliError("checkpoint network does not match the configured network")
        model = ckpt.to_model()
        start_iteration = ckpt.iteration
        velocity = ckpt.velocity
        metrics = out / "metrics.csv"
        if metrics.exists():
            curve = TrainingCurve.read_csv(metrics)
            curve.points = [p for p in curve.points if p.iteration <= start_iteration]
        _log(f"resuming from iteration {start_iteration}")
    else:
        _write_snapshot(cfg, out)
        model = build_model(spec, cfg["network_seed"])

    if train_config.max_iterations == 0 or start_iteration >= train_config.max_iterations:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, velocity, out / "checkpoints" / "final.ckpt",
                        iteration=start_iteration)
        _log(f"nothing to train (iteration {start_iteration} of "
             f"{train_config.max_iterations}); checkpoint written")
        return 0

    result = train(model, manifest, train_config, run_dir=out,
                   start_iteration=start_iteration, velocity=velocity,
                   curve=curve, log=_log)
    _log(f"finished at iteration {result.final_iteration}: "
         f"best val accuracy {result.best_accuracy:.4f} -> {out}")
    return 0


# --- eval / snr-sweep ---

def _load_model_and_data(checkpoint, data):
    model = load_checkpoint(checkpoint).to_model()
    manifest = load_manifest(data)
    if manifest.num_classes != model.spec.num_classes:
        raise CliError(
            f"dataset has {manifest.num_classes} classes but model head is "
            f"{model.spec.num_classes}")
    return model, manifest


EVAL_DEFAULTS = {"checkpoint": None, "data": None}


def cmd_eval(args) -> int:
    out = _resolve_out(args.out, "eval")
    cfg = _merge_config(EVAL_DEFAULTS, args.config, args)
    if cfg["checkpoint"] is None or cfg["data"] is None:
        raise CliError("--checkpoint and --data are required")
    _write_snapshot(cfg, out)
    model, manifest = _load_model_and_data(cfg["checkpoint"], cfg["data"])
    records, labels = load_all(manifest)
    _, test_idx = split(manifest)
    report = per_category_report(model, to_tensor(records[test_idx]), labels[test_idx])
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    report.write_csv(reports / "per_class_accuracy.csv")
    _log(report.summary())
    return 0


SWEEP_DEFAULTS = {"checkpoint": None, "data": None,
                  "snrs": "0,3,6,9,12,15,20", "noise_seed": 0}


def cmd_snr_sweep(args) -> int:
    out = _resolve_out(args.out, "snr-sweep")
    cfg = _merge_config(SWEEP_DEFAULTS, args.config, args)
    if cfg["checkpoint"] is None or cfg["data"] is None:
        raise CliError("--checkpoint and --data are required")
    snrs = [float("inf") if t.strip() == "inf" else float(t)
            for t in str(cfg["snrs"]).split(",") if t.strip()]
    _write_snapshot(cfg, out)
    model, manifest = _load_model_and_data(cfg["checkpoint"], cfg["data"])
    report = snr_sweep(model, manifest, snrs, noise_seed=cfg["noise_seed"])
    reports = out / "reports"
    reports.mkdir(parents=True, exist_ok=True)
    report.write_csv(reports / "snr_sweep.csv")
    for p in report.points:
        label = "clean" if np.isinf(p.snr_db) else f"{p.snr_db:g} dB"
        _log(f"{label}: accuracy {p.accuracy:.4f}, confidence {p.mean_confidence:.4f}")
    return 0


# --- transfer ---

TRANSFER_DEFAULTS = {
    "kind": "acars",
    "pool_classes": 30,
    "subsets": [4, 12, 30],
    "new_task_classes": 10,
    "sample_len": 512,
    "sample_rate_hz": 9600.0,
    "pool_seed": 101,
    "new_task_seed": 202,
    "network_seed": 3,
    "pretrain_iters": 2000,
    "finetune_iters": 800,
    "validate_every": 250,
    "finetune_validate_every": 10,
    "thresholds": [60, 70, 80, 90],
}


def cmd_transfer(args) -> int:
    out = _resolve_out(args.out, "transfer")
    cfg = _merge_config(TRANSFER_DEFAULTS, args.config, args)
    _write_snapshot(cfg, out)
    xcfg = TransferExperimentConfig(
        burst_kind=cfg["kind"],
        pool_classes=cfg["pool_classes"],
        pretrain_subsets=tuple(cfg["subsets"]),
        new_task_classes=cfg["new_task_classes"],
        sample_len=cfg["sample_len"],
        sample_rate_hz=cfg["sample_rate_hz"],
        pool_seed=cfg["pool_seed"],
        new_task_seed=cfg["new_task_seed"],
        network_seed=cfg["network_seed"],
        pretrain=TrainConfig.desk_defaults(
            max_iterations=cfg["pretrain_iters"],
            validate_every=cfg["validate_every"],
            seed=1,
        ),
        finetune_iterations=cfg["finetune_iters"],
        finetune_validate_every=cfg["finetune_validate_every"],
        thresholds=tuple(t / 100.0 for t in cfg["thresholds"]),
    )
    table, _ = run_transfer_experiment(xcfg, out, log=_log)
    for regime, cells in table.rows.items():
        shown = ["NR" if c is None else str(c) for c in cells]
        _log(f"{regime}: iterations to {cfg['thresholds']} = {shown}, "
             f"final accuracy {table.final_accuracy[regime]:.4f}")
    return 0


# --- parser ---

def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", default=None, help="run directory")
    p.add_argument("--config", default=None,
                   help="JSON config snapshot; explicit flags override it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="burstnet",
        description="Synthetic radio-burst emitter classification pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    g = sub.add_parser("gen-data", help="generate a labeled burst dataset")
    _add_common(g)
    g.add_argument("--kind", choices=["acars", "adsb"], default=S)
    g.add_argument("--classes", type=int, default=S)
    g.add_argument("--per-class", dest="per_class", type=int, nargs=2,
                   metavar=("MIN", "MAX"), default=S)
    g.add_argument("--test-per-class", dest="test_per_class", type=int, default=S)
    g.add_argument("--sample-len", dest="sample_len", type=int, default=S)
    g.add_argument("--sample-rate", dest="sample_rate", type=float, default=S)
    g.add_argument("--snr-range", dest="snr_range", type=float, nargs=2,
                   metavar=("LO", "HI"), default=S)
    g.add_argument("--interference-prob", dest="interference_prob", type=float, default=S)
    g.add_argument("--interference-power-db", dest="interference_power_db",
                   type=float, default=S)
    g.add_argument("--text-len", dest="text_len", type=int, default=S)
    g.add_argument("--seed", type=int, default=S)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a classifier on a generated dataset")
    _add_common(t)
    t.add_argument("--data", default=S, help="dataset directory")
    t.add_argument("--network", choices=["default", "small"], default=S)
    t.add_argument("--network-seed", dest="network_seed", type=int, default=S)
    t.add_argument("--seed", type=int, default=S)
    t.add_argument("--lr", dest="learning_rate", type=float, default=S)
    t.add_argument("--momentum", type=float, default=S)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=S)
    t.add_argument("--max-iters", dest="max_iters", type=int, default=S)
    t.add_argument("--validate-every", dest="validate_every", type=int, default=S)
    t.add_argument("--weight-decay", dest="weight_decay", type=float, default=S)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int, default=S)
    t.add_argument("--augment-snr", dest="augment_snr", type=float, nargs=2,
                   metavar=("LO_DB", "HI_DB"), default=S,
                   help="train-time AWGN exposure: per-record SNR range in dB")
    t.add_argument("--augment-prob", dest="augment_prob", type=float, default=S)
    t.add_argument("--full-scale", dest="full_scale", action="store_true",
                   default=S, help="batch 190, 101,250 iterations, validate every 1,350")
    t.add_argument("--resume", action="store_true",
                   help="continue from the latest checkpoint in --out")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-class accuracy report on the test split")
    _add_common(e)
    e.add_argument("--checkpoint", default=S)
    e.add_argument("--data", default=S)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("snr-sweep", help="accuracy vs injected noise level")
    _add_common(s)
    s.add_argument("--checkpoint", default=S)
    s.add_argument("--data", default=S)
    s.add_argument("--snrs", default=S,
                   help="comma-separated dB values; 'inf' = no noise")
    s.add_argument("--noise-seed", dest="noise_seed", type=int, default=S)
    s.set_defaults(func=cmd_snr_sweep)

    x = sub.add_parser("transfer", help="nested-subset transfer-learning experiment")
    _add_common(x)
    x.add_argument("--kind", choices=["acars", "adsb"], default=S)
    x.add_argument("--pool-classes", dest="pool_classes", type=int, default=S)
    x.add_argument("--subsets", type=lambda s: [int(t) for t in s.split(",")], default=S)
    x.add_argument("--new-task-classes", dest="new_task_classes", type=int, default=S)
    x.add_argument("--sample-len", dest="sample_len", type=int, default=S)
    x.add_argument("--pool-seed", dest="pool_seed", type=int, default=S)
    x.add_argument("--new-task-seed", dest="new_task_seed", type=int, default=S)
    x.add_argument("--network-seed", dest="network_seed", type=int, default=S)
    x.add_argument("--pretrain-iters", dest="pretrain_iters", type=int, default=S)
    x.add_argument("--finetune-iters", dest="finetune_iters", type=int, default=S)
    x.add_argument("--validate-every", dest="validate_every", type=int, default=S)
    x.add_argument("--thresholds",
                   type=lambda s: [float(t) for t in s.split(",")], default=S,
                   help="accuracy thresholds in percent, e.g. 60,70,80,90")
    x.set_defaults(func=cmd_transfer)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
