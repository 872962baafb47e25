"""Evaluation metrics: PSNR for restoration quality, error rate plus a
confusion matrix for recognition.

PSNR is computed on the global MSE over all N*D pixels of the test set
(not averaged per image) with peak value 1.0, and capped at 99 dB so
perfect reconstructions stay finite in reports. The identity baseline
PSNR(clean, noisy) is reported alongside as the "noisy floor": any
useful denoiser must land above it.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .network import TriPathNet, decode_image, decode_label, encode
from .numerics import ShapeError

PSNR_CAP_DB = 99.0


@dataclass
class MetricsReport:
    psnr_db: float
    noisy_floor_db: float
    error_rate: float
    confusion: np.ndarray  # K x K counts, rows = truth
    n_examples: int

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        if self.confusion.ndim != 2 or \
                self.confusion.shape[0] != self.confusion.shape[1]:
            raise ShapeError(f"confusion must be square, got "
                             f"{self.confusion.shape}")
        if int(self.confusion.sum()) != self.n_examples:
            raise ValueError(
                f"confusion entries sum to {int(self.confusion.sum())}, "
                f"expected {self.n_examples}"
            )
        correct = int(np.trace(self.confusion))
        expected = 1.0 - correct / self.n_examples
        if abs(self.error_rate - expected) > 1e-12:
            raise ValueError(
                f"error_rate {self.error_rate} inconsistent with confusion "
                f"trace ({expected})"
            )

    def to_json(self) -> str:
        return json.dumps({
            "psnr_db": self.psnr_db,
            "noisy_floor_db": self.noisy_floor_db,
            "error_rate": self.error_rate,
            "n": self.n_examples,
            "confusion": self.confusion.tolist(),
        }, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        doc = json.loads(text)
        return cls(doc["psnr_db"], doc["noisy_floor_db"], doc["error_rate"],
                   np.array(doc["confusion"]), doc["n"])


def psnr(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB over the global MSE, peak = 1.0."""
    reference = np.asarray(reference, dtype=np.float64)
    estimate = np.asarray(estimate, dtype=np.float64)
    if reference.shape != estimate.shape:
        raise ShapeError(f"psnr: shapes differ, {reference.shape} vs "
                         f"{estimate.shape}")
    for name, a in (("reference", reference), ("estimate", estimate)):
        if a.size and (a.min() < 0.0 or a.max() > 1.0):
            raise ValueError(f"psnr: {name} values outside [0, 1]")
    mse = float(np.mean((reference - estimate) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(-10.0 * np.log10(mse), PSNR_CAP_DB)


def error_rate(predicted, truth):
    """Fraction of mismatches plus the K x K confusion matrix (rows =
    truth, cols = prediction); K spans the labels present in either."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape or predicted.ndim != 1:
        raise ShapeError(f"error_rate: label vectors differ, "
                         f"{predicted.shape} vs {truth.shape}")
    if predicted.size == 0:
        raise ValueError("error_rate: empty input")
    k = int(max(predicted.max(), truth.max())) + 1
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (truth, predicted), 1)
    rate = float(np.mean(predicted != truth))
    return rate, confusion


def evaluate_predictor(predict_fn, triplets, montage_dir=None,
                       montage_count=100, montage_cols=10) -> MetricsReport:
    """Metrics for any predictor mapping noisy rows to (denoised,
    classes); optionally writes clean/noisy/denoised PGM montages of the
    first `montage_count` rows into montage_dir."""
    from .dataio import write_pgm_montage

    denoised, predicted = predict_fn(triplets.noisy)
    truth = np.argmax(triplets.labels_onehot, axis=1)

    rate, confusion = error_rate(predicted, truth)
    k = triplets.num_classes
    if confusion.shape[0] < k:  # pad when high classes never occur
        padded = np.zeros((k, k), dtype=np.int64)
        padded[:confusion.shape[0], :confusion.shape[1]] = confusion
        confusion = padded

    report = MetricsReport(
        psnr_db=psnr(triplets.clean, denoised),
        noisy_floor_db=psnr(triplets.clean, triplets.noisy),
        error_rate=rate,
        confusion=confusion,
        n_examples=triplets.n,
    )

    if montage_dir is not None:
        count = min(montage_count, triplets.n)
        for name, images in (("clean", triplets.clean),
                             ("noisy", triplets.noisy),
                             ("denoised", denoised)):
            write_pgm_montage(
                np.clip(images[:count], 0.0, 1.0), triplets.width,
                triplets.height, montage_cols,
                os.path.join(montage_dir, f"{name}.pgm"))
    return report


def evaluate(net: TriPathNet, triplets, montage_dir=None,
             montage_count=100, montage_cols=10) -> MetricsReport:
    """Full test-set metrics for a joint net (see evaluate_predictor)."""
    def predict_fn(noisy):
        h = encode(net, noisy)
        return decode_image(net, h), np.argmax(decode_label(net, h), axis=1)

    return evaluate_predictor(predict_fn, triplets, montage_dir,
                              montage_count, montage_cols)
