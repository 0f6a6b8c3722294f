"""Transfer-learning experiment: pretrain on nested class subsets, fine-tune
on a disjoint new task, and tabulate iterations-to-threshold.

Subsets are nested by construction: a pool dataset generated with the same
seed but fewer classes reproduces the larger pool's first classes
bit-exactly (per-class generation streams are independent). Fine-tuning
replaces the classifier head with a freshly initialized one sized to the
new task and trains all parameters (no freezing) at 0.1x the pretraining
learning rate, with the fresh head scaled 10x so it learns at the full
pretraining rate while the backbone adapts gently. The no-transfer
baseline trains from scratch on identical new-task data and seeds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import DatasetConfig, DatasetManifest, generate_dataset, load_manifest
from .model import (
    Checkpoint,
    Model,
    NetworkSpec,
    build_model,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
    small_network_spec,
)
from .ops import BatchNormStats
from .training import TrainConfig, TrainingCurve, TrainResult, train


class TransferError(ValueError):
    pass


@dataclass
class TransferExperimentConfig:
    burst_kind: str = "acars"
    pool_classes: int = 30
    pretrain_subsets: tuple[int, ...] = (4, 12, 30)  # ascending; nested class sets
    pool_per_class_range: tuple[int, int] = (100, 140)
    new_task_classes: int = 10
    new_task_per_class_range: tuple[int, int] = (80, 130)
    test_per_class: int = 20
    sample_len: int = 512
    # 4 samples/symbol keeps plenty of symbols (and thus fingerprint
    # evidence) inside a 512-sample window
    sample_rate_hz: float | None = 9_600.0
    pool_seed: int = 101
    new_task_seed: int = 202
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig.desk_defaults(
        max_iterations=2000, validate_every=250, seed=1))
    finetune_iterations: int = 800
    finetune_validate_every: int = 10
    thresholds: tuple[float, ...] = (0.6, 0.7, 0.8, 0.9)
    network_seed: int = 3

    def validate(self):
        if list(self.pretrain_subsets) != sorted(self.pretrain_subsets):
            raise TransferError("pretrain_subsets must be ascending (nested)")
        if self.pretrain_subsets[-1] > self.pool_classes:
            raise TransferError(
                f"largest subset {self.pretrain_subsets[-1]} exceeds pool of "
                f"{self.pool_classes} classes"
            )
        if self.pool_seed == self.new_task_seed:
            raise TransferError("pool and new-task seeds must differ (disjoint emitters)")
        if list(self.thresholds) != sorted(self.thresholds):
            raise TransferError("thresholds must be ascending")


@dataclass
class ThresholdTable:
    thresholds: tuple[float, ...]
    rows: dict[str, list[int | None]]  # regime -> iterations (None = not reached)
    final_accuracy: dict[str, float]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["regime"] + [f"{t:.0%}" for t in self.thresholds] + ["final_accuracy"])
            for regime, cells in self.rows.items():
                w.writerow(
                    [regime]
                    + ["NR" if c is None else c for c in cells]
                    + [f"{self.final_accuracy[regime]:.4f}"]
                )


def iterations_to_threshold(curve: TrainingCurve, thresholds) -> list[int | None]:
    """First validation iteration whose accuracy reaches each threshold."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise TransferError("thresholds must be sorted ascending")
    out: list[int | None] = []
    for t in thresholds:
        hit = next((it for it, acc in curve.accuracies() if acc >= t), None)
        out.append(hit)
    return out


def replace_head(model: Model, num_new_classes: int, head_seed: int) -> Model:
    """Fresh classifier head for a new task; all other parameters kept."""
    new_spec = replace(model.spec, num_classes=num_new_classes)
    feature_dim = model.feature_dim
    rng = np.random.default_rng(head_seed)
    params = {k: v.copy() for k, v in model.params.items()}
    params["head/fc/w"] = rng.normal(0.0, np.sqrt(2.0 / feature_dim),
                                     size=(feature_dim, num_new_classes))
    params["head/fc/b"] = np.zeros(num_new_classes)
    stats = {k: BatchNormStats(v.mean.copy(), v.var.copy(), v.initialized)
             for k, v in model.bn_stats.items()}
    return Model(new_spec, params, stats, model.init_seed)


def _check_disjoint(pretrain_manifest: DatasetManifest, new_manifest: DatasetManifest):
    pre = {c.emitter_id for c in pretrain_manifest.classes}
    new = {c.emitter_id for c in new_manifest.classes}
    overlap = pre & new
    if overlap:
        raise TransferError(f"new-task emitters overlap pretraining: {sorted(overlap)[:3]}")


def pretrain_subsets(config: TransferExperimentConfig, work_dir,
                     log=lambda msg: None) -> list[tuple[int, Path, DatasetManifest]]:
    """Train one checkpoint per nested subset; returns (size, ckpt path, manifest)."""
    config.validate()
    work = Path(work_dir)
    out = []
    for size in config.pretrain_subsets:
        ds_dir = work / f"pool_{size}"
        manifest = generate_dataset(
            DatasetConfig(
                burst_kind=config.burst_kind,
                num_classes=size,
                per_class_range=config.pool_per_class_range,
                test_per_class=config.test_per_class,
                sample_len=config.sample_len,
                seed=config.pool_seed,
                sample_rate_hz=config.sample_rate_hz,
            ),
            ds_dir,
        )
        spec = small_network_spec(size, config.sample_len)
        model = build_model(spec, config.network_seed)
        log(f"pretraining on {size}-class subset")
        result = train(model, manifest, config.pretrain, log=log)
        ckpt = work / f"net_{size}.ckpt"
        save_checkpoint(result.model, result.velocity, ckpt,
                        iteration=result.final_iteration)
        out.append((size, ckpt, manifest))
    # nesting check: smaller subsets are prefixes of the larger ones
    for (a, _, ma), (b, _, mb) in zip(out, out[1:]):
        ids_a = [c.emitter_id for c in ma.classes]
        ids_b = [c.emitter_id for c in mb.classes]
        if ids_b[: len(ids_a)] != ids_a:
            raise TransferError(f"subset {a} is not nested in subset {b}")
    return out


def fine_tune(checkpoint: Checkpoint, new_manifest: DatasetManifest,
              config: TransferExperimentConfig,
              pretrain_emitter_ids: set[str] | None = None,
              log=lambda msg: None) -> TrainResult:
    """Replace the head, then train all parameters at 0.1x the pretraining lr."""
    if pretrain_emitter_ids is not None:
        overlap = pretrain_emitter_ids & {c.emitter_id for c in new_manifest.classes}
        if overlap:
            raise TransferError(f"new-task emitters overlap pretraining: {sorted(overlap)[:3]}")
    model = replace_head(checkpoint.to_model(), new_manifest.num_classes,
                         head_seed=config.network_seed + 1)
    head_names = [k for k in model.params if k.startswith("head/")]
    ft_config = replace(
        config.pretrain,
        learning_rate=config.pretrain.learning_rate * 0.1,
        max_iterations=config.finetune_iterations,
        validate_every=config.finetune_validate_every,
        # the head is freshly initialized: let it learn at the pretraining
        # rate while the backbone only adapts
        lr_scales={name: 10.0 for name in head_names},
    )
    return train(model, new_manifest, ft_config, log=log)


def run_transfer_experiment(config: TransferExperimentConfig, work_dir,
                            log=lambda msg: None) -> tuple[ThresholdTable, dict]:
    """All regimes on identical new-task data: no-TL baseline + one per subset."""
    config.validate()
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    pretrained = pretrain_subsets(config, work, log=log)
    new_manifest = generate_dataset(
        DatasetConfig(
            burst_kind=config.burst_kind,
            num_classes=config.new_task_classes,
            per_class_range=config.new_task_per_class_range,
            test_per_class=config.test_per_class,
            sample_len=config.sample_len,
            seed=config.new_task_seed,
            sample_rate_hz=config.sample_rate_hz,
        ),
        work / "new_task",
    )
    for _, _, pool_manifest in pretrained:
        _check_disjoint(pool_manifest, new_manifest)

    curves: dict[str, TrainingCurve] = {}
    rows: dict[str, list[int | None]] = {}
    final_acc: dict[str, float] = {}

    log("training no-TL baseline")
    baseline_cfg = replace(
        config.pretrain,
        max_iterations=config.finetune_iterations,
        validate_every=config.finetune_validate_every,
    )
    base_model = build_model(
        small_network_spec(config.new_task_classes, config.sample_len),
        config.network_seed,
    )
    base = train(base_model, new_manifest, baseline_cfg, log=log)
    curves["no_tl"] = base.curve
    rows["no_tl"] = iterations_to_threshold(base.curve, config.thresholds)
    final_acc["no_tl"] = base.curve.points[-1].val_accuracy

    pool_ids = {c.emitter_id for _, _, m in pretrained for c in m.classes}
    for size, ckpt_path, _ in pretrained:
        regime = f"net_{size}"
        log(f"fine-tuning {regime}")
        result = fine_tune(load_checkpoint(ckpt_path), new_manifest, config,
                           pretrain_emitter_ids=pool_ids, log=log)
        curves[regime] = result.curve
        rows[regime] = iterations_to_threshold(result.curve, config.thresholds)
        final_acc[regime] = result.curve.points[-1].val_accuracy

    table = ThresholdTable(tuple(config.thresholds), rows, final_acc)
    table.write_csv(work / "threshold_table.csv")
    for regime, curve in curves.items():
        curve.write_csv(work / f"curve_{regime}.csv")
    return table, curves
