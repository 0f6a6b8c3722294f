"""Analysis surfaces: per-category accuracy, histograms, SNR robustness sweep."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .burst import IQBurst
from .channel import add_awgn
from .dataset import DatasetManifest, load_all, split, to_tensor
from .model import Model, forward
from .training import validate
from . import ops

HISTOGRAM_BINS = 10  # [0, 0.1), ..., [0.9, 1.0]


@dataclass
class ClassAccuracy:
    class_id: int
    n_test: int
    accuracy: Fraction


@dataclass
class EvalReport:
    overall_accuracy: Fraction
    per_class: list[ClassAccuracy]
    histogram: list[int]
    confusions: list[tuple[int, int, int]]  # (true, predicted, count), most confused first

    @property
    def classes_above_90(self) -> int:
        return sum(1 for c in self.per_class if c.accuracy > Fraction(9, 10))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["class_id", "n_test", "accuracy"])
            for c in self.per_class:
                w.writerow([c.class_id, c.n_test, f"{float(c.accuracy):.6f}"])

    def summary(self) -> str:
        return (
            f"overall accuracy {float(self.overall_accuracy):.4f}; "
            f"{self.classes_above_90} of {len(self.per_class)} classes above 90%"
        )


def per_category_report(model: Model, x_test, y_test) -> EvalReport:
    """Per-class accuracies, 0.1-wide histogram, and top confusion pairs."""
    preds = np.empty(len(y_test), dtype=np.int64)
    for start in range(0, len(y_test), 256):
        logits = forward(model, x_test[start : start + 256], "eval")
        preds[start : start + 256] = logits.argmax(axis=1)
    return report_from_predictions(preds, y_test, model.spec.num_classes)


def report_from_predictions(preds, y_test, num_classes: int) -> EvalReport:
    per_class = []
    histogram = [0] * HISTOGRAM_BINS
    for cid in range(num_classes):
        mask = y_test == cid
        n = int(mask.sum())
        if n == 0:
            raise ValueError(f"class {cid} has no test samples")
        acc = Fraction(int((preds[mask] == cid).sum()), n)
        per_class.append(ClassAccuracy(cid, n, acc))
        histogram[min(int(acc * HISTOGRAM_BINS), HISTOGRAM_BINS - 1)] += 1
    overall = Fraction(int((preds == y_test).sum()), len(y_test))
    pair_counts: dict[tuple[int, int], int] = {}
    for t, p in zip(y_test.tolist(), preds.tolist()):
        if t != p:
            pair_counts[(t, p)] = pair_counts.get((t, p), 0) + 1
    confusions = sorted(
        ((t, p, c) for (t, p), c in pair_counts.items()), key=lambda x: -x[2]
    )[:10]
    return EvalReport(overall, per_class, histogram, confusions)


@dataclass
class SnrPoint:
    snr_db: float  # inf means the clean, no-noise point
    accuracy: float
    mean_confidence: float  # over correctly classified samples
    n: int


@dataclass
class SnrSweepReport:
    points: list[SnrPoint]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["snr_db", "accuracy", "mean_confidence", "n"])
            for p in self.points:
                snr = "inf" if np.isinf(p.snr_db) else f"{p.snr_db:g}"
                w.writerow([snr, f"{p.accuracy:.6f}", f"{p.mean_confidence:.6f}", p.n])


def snr_sweep(model: Model, manifest: DatasetManifest, snr_list,
              noise_seed: int) -> SnrSweepReport:
    """Accuracy and mean correct-prediction confidence at each injected SNR.

    SNR of +inf is the identity channel and reproduces clean accuracy
    exactly. Noise at each point uses independent seeds derived from
    (noise_seed, snr index, sample index).
    """
    snr_list = list(snr_list)
    if not snr_list:
        raise ValueError("snr_list must not be empty")
    records, labels = load_all(manifest)
    _, test_idx = split(manifest)
    test_records = records[test_idx]
    y_test = labels[test_idx]
    points = []
    for si, snr_db in enumerate(snr_list):
        if np.isinf(snr_db):
            noisy = test_records.astype(np.complex128)
        else:
            noisy = np.empty(test_records.shape, dtype=np.complex128)
            for j in range(len(test_records)):
                burst = IQBurst(test_records[j].astype(np.complex128),
                                manifest.sample_rate_hz)
                rng = np.random.default_rng(
                    np.random.SeedSequence([noise_seed, si, j])
                )
                noisy[j] = add_awgn(burst, float(snr_db), rng).samples
        x = np.stack([noisy.real, noisy.imag], axis=1)
        correct_mask = np.empty(len(y_test), dtype=bool)
        conf = np.empty(len(y_test))
        for start in range(0, len(y_test), 256):
            logits = forward(model, x[start : start + 256], "eval")
            probs = ops.softmax(logits)
            pred = logits.argmax(axis=1)
            correct_mask[start : start + 256] = pred == y_test[start : start + 256]
            conf[start : start + 256] = probs[np.arange(len(pred)), pred]
        acc = float(correct_mask.mean())
        mean_conf = float(conf[correct_mask].mean()) if correct_mask.any() else 0.0
        points.append(SnrPoint(float(snr_db), acc, mean_conf, len(y_test)))
    return SnrSweepReport(points)
