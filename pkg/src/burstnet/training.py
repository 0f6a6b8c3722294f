"""SGD-with-momentum training loop, validation, checkpointing, metrics.

The optimizer uses the classic velocity form

    v <- mu * v - lr * g
    w <- w + v

applied elementwise to every parameter tensor. The learning rate follows
a step schedule (x0.1 at 60% and 85% of max_iterations by default).
Validation runs on the held-out split in eval mode and never touches
model parameters or BN statistics.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import ops
from .dataset import BatchIterator, DatasetManifest, load_all, split, to_tensor
from .model import Model, build_model, forward, forward_with_tape, save_checkpoint

CURVE_HEADER = ["iteration", "train_loss", "val_accuracy", "val_loss"]


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 190
    max_iterations: int = 101_250
    validate_every: int = 1_350
    weight_decay: float = 0.0
    lr_decay_points: tuple[float, float] = (0.6, 0.85)  # fractions of max_iterations
    lr_decay_factor: float = 0.1
    seed: int = 0
    checkpoint_every: int | None = None
    lr_scales: dict | None = None  # per-parameter lr multipliers
    # train-time AWGN augmentation: with probability augment_prob, a batch is
    # degraded to an SNR drawn uniformly from augment_snr_range (dB). Exposure
    # to noise keeps the classifier's confidence calibrated under noise
    # instead of overconfident on inputs far from the clean manifold.
    augment_snr_range: tuple[float, float] | None = None
    augment_prob: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_iterations and self.validate_every > self.max_iterations:
            raise ValueError("validate_every must be <= max_iterations")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValueError(f"augment_prob must be in [0, 1], got {self.augment_prob}")

    @classmethod
    def full_scale_defaults(cls, **overrides) -> "TrainConfig":
        """Batch 190, momentum 0.9, 101,250 iterations, validate every 1,350."""
        return cls(**overrides)

    @classmethod
    def desk_defaults(cls, **overrides) -> "TrainConfig":
        """Settings sized for a single commodity core; the higher learning
        rate is calibrated to the small batch."""
        base = dict(batch_size=32, max_iterations=5_000, validate_every=250,
                    learning_rate=0.03)
        base.update(overrides)
        return cls(**base)

    def lr_at(self, iteration: int) -> float:
        lr = self.learning_rate
        for frac in self.lr_decay_points:
            if iteration >= frac * self.max_iterations:
                lr *= self.lr_decay_factor
        return lr


@dataclass
class CurvePoint:
    iteration: int
    train_loss: float
    val_accuracy: float
    val_loss: float
    wall_ms: float = 0.0  # in-memory only; deliberately kept out of the CSV


@dataclass
class TrainingCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, p: CurvePoint):
        if self.points and p.iteration <= self.points[-1].iteration:
            raise ValueError("curve iterations must be strictly increasing")
        self.points.append(p)

    def accuracies(self) -> list[tuple[int, float]]:
        return [(p.iteration, p.val_accuracy) for p in self.points]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CURVE_HEADER)
            for p in self.points:
                w.writerow([p.iteration, f"{p.train_loss:.6f}", f"{p.val_accuracy:.6f}",
                            f"{p.val_loss:.6f}"])

    @classmethod
    def read_csv(cls, path) -> "TrainingCurve":
        curve = cls()
        with open(path) as f:
            for row in csv.DictReader(f):
                curve.append(CurvePoint(
                    int(row["iteration"]), float(row["train_loss"]),
                    float(row["val_accuracy"]), float(row["val_loss"]),
                ))
        return curve


class DivergenceError(RuntimeError):
    pass


def sgd_momentum_step(params: dict, grads: dict, velocity: dict,
                      lr: float, mu: float, weight_decay: float = 0.0,
                      lr_scales: dict | None = None) -> None:
    """In-place velocity-form update on every parameter with a gradient.

    lr_scales maps parameter names to multipliers on the base rate (used by
    fine-tuning to train a fresh head faster than a pretrained backbone).
    """
    for name, g in grads.items():
        if name not in params:
            raise ValueError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(
                f"shape mismatch for {name}: param {params[name].shape} vs grad {g.shape}"
            )
        if weight_decay:
            g = g + weight_decay * params[name]
        step = lr if lr_scales is None else lr * lr_scales.get(name, 1.0)
        v = velocity.setdefault(name, np.zeros_like(params[name]))
        v *= mu
        v -= step * g
        params[name] += v


def validate(model: Model, x_test: np.ndarray, y_test: np.ndarray,
             batch_size: int = 256) -> tuple[float, float, np.ndarray]:
    """Eval-mode accuracy, mean loss, and per-sample predicted-class confidence."""
    n = len(y_test)
    correct = 0
    loss_sum = 0.0
    confidences = np.empty(n)
    for start in range(0, n, batch_size):
        xb = x_test[start : start + batch_size]
        yb = y_test[start : start + batch_size]
        logits = forward(model, xb, "eval")
        loss, probs, _ = ops.softmax_crossentropy(logits, yb)
        pred = logits.argmax(axis=1)  # ties resolve to the lowest index
        correct += int((pred == yb).sum())
        loss_sum += loss * len(yb)
        confidences[start : start + len(yb)] = probs[np.arange(len(yb)), pred]
    return correct / n, loss_sum / n, confidences


@dataclass
class TrainResult:
    model: Model
    curve: TrainingCurve
    velocity: dict
    best_accuracy: float
    final_iteration: int


def _augment_batch(xb: np.ndarray, snr_range: tuple[float, float],
                   prob: float, seed: int, iteration: int) -> np.ndarray:
    """AWGN-degrade a random subset of a training batch, one SNR per record.

    Seeded statelessly from (seed, iteration) so resumed training sees the
    same noise stream as an uninterrupted run. SNR is measured against each
    record's own mean power, matching the channel op's definition.
    """
    rng = np.random.default_rng((seed, 0xA46, iteration))
    keep_clean = rng.random(xb.shape[0]) >= prob
    snr_db = rng.uniform(*snr_range, size=xb.shape[0])
    p_signal = (xb ** 2).sum(axis=1).mean(axis=1)  # mean |x|^2 per record
    scale = np.sqrt(p_signal / 10.0 ** (snr_db / 10.0) / 2.0)
    scale[keep_clean] = 0.0
    return xb + scale[:, None, None] * rng.standard_normal(xb.shape)


def train(model: Model, manifest: DatasetManifest, config: TrainConfig,
          run_dir=None, start_iteration: int = 0, velocity: dict | None = None,
          curve: TrainingCurve | None = None,
          log=lambda msg: None) -> TrainResult:
    """Train up to max_iterations, validating on the held-out test split.

    Deterministic given (config.seed, manifest seed) under serial execution.
    When run_dir is given, writes metrics.csv plus best/final checkpoints.
    """
    if manifest.num_classes != model.spec.num_classes:
        raise ValueError(
            f"dataset has {manifest.num_classes} classes but model head is "
            f"{model.spec.num_classes}"
        )
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    batches = BatchIterator(manifest, "train", config.batch_size,
                            shuffle_seed=config.seed)
    # fast-forward the shuffle stream when resuming
    for _ in range(start_iteration):
        batches.next_batch()
    records, labels = load_all(manifest)
    _, test_idx = split(manifest)
    x_test = to_tensor(records[test_idx])
    y_test = labels[test_idx]

    velocity = velocity if velocity is not None else {}
    curve = curve if curve is not None else TrainingCurve()
    best_acc = max((p.val_accuracy for p in curve.points), default=-1.0)
    t0 = time.monotonic()
    loss = float("nan")
    iteration = start_iteration
    while iteration < config.max_iterations:
        xb, yb = batches.next_batch()
        if config.augment_snr_range is not None:
            xb = _augment_batch(xb, config.augment_snr_range,
                                config.augment_prob, config.seed, iteration)
        logits, back = forward_with_tape(model, xb, "train")
        loss, _, ctx = ops.softmax_crossentropy(logits, yb)
        if not np.isfinite(loss):
            raise DivergenceError(
                f"non-finite loss at iteration {iteration + 1}; last checkpoint retained"
            )
        grads: dict = {}
        back(ops.softmax_crossentropy_backward(ctx), grads)
        sgd_momentum_step(model.params, grads, velocity,
                          config.lr_at(iteration), config.momentum,
                          config.weight_decay, config.lr_scales)
        iteration += 1
        if iteration % config.validate_every == 0:
            acc, val_loss, _ = validate(model, x_test, y_test)
            wall = (time.monotonic() - t0) * 1000
            curve.append(CurvePoint(iteration, float(loss), acc, val_loss, wall))
            log(f"iter {iteration}: train_loss={loss:.4f} val_acc={acc:.4f}")
            if run_dir is not None:
                curve.write_csv(run_dir / "metrics.csv")
                if acc > best_acc:
                    save_checkpoint(model, velocity, run_dir / "checkpoints" / "best.ckpt",
                                    iteration=iteration)
            best_acc = max(best_acc, acc)
        if (run_dir is not None and config.checkpoint_every
                and iteration % config.checkpoint_every == 0):
            save_checkpoint(model, velocity,
                            run_dir / "checkpoints" / f"iter_{iteration:08d}.ckpt",
                            iteration=iteration)
    if run_dir is not None:
        save_checkpoint(model, velocity, run_dir / "checkpoints" / "final.ckpt",
                        iteration=iteration)
        curve.write_csv(run_dir / "metrics.csv")
    return TrainResult(model, curve, velocity, max(best_acc, 0.0), iteration)
