"""Structured corruption of character images.

Two families:

* type 1 (light): a handful of full-span horizontal/vertical lines and
  sine waves.
* type 2 (heavy): random-walk strokes accumulated onto a mask until a
  target fraction of pixels is covered.

Noise is written with max(), so bright strokes over bright digit pixels
are idempotent and corruption never darkens the image. Every numeric
range here (element counts, amplitude/period spans, stroke geometry) is
a tunable default, exposed through the experiment config.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataio import ImageDataset
from .numerics import Rng, derive_seed


@dataclass
class Type1Params:
    min_elems: int = 1
    max_elems: int = 3
    line_thickness: int = 1
    # None = derived from the image: amplitude in [2, H/4], period in [8, W]
    sine_amplitude_range: tuple | None = None
    sine_period_range: tuple | None = None
    orientation_weights: tuple = (1.0, 1.0, 1.0)  # horizontal, vertical, sine


@dataclass
class Type2Params:
    coverage_target: float = 0.5
    stroke_width: int = 2
    step_length: float = 1.0
    max_turn: float = 0.5  # radians per step


@dataclass
class NoiseSpec:
    kind: str = "type1"  # "type1" | "type2"
    intensity: float = 1.0
    replicate: int = 1
    type1: Type1Params = field(default_factory=Type1Params)
    type2: Type2Params = field(default_factory=Type2Params)

    def __post_init__(self):
        if self.kind not in ("type1", "type2"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 < self.type2.coverage_target <= 1.0:
            raise ValueError("coverage_target must be in (0, 1]")
        if self.type1.min_elems > self.type1.max_elems:
            raise ValueError("min_elems > max_elems")
        if self.type1.line_thickness < 1:
            raise ValueError("line_thickness must be >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "intensity": self.intensity,
            "replicate": self.replicate,
            "type1": {
                "min_elems": self.type1.min_elems,
                "max_elems": self.type1.max_elems,
                "line_thickness": self.type1.line_thickness,
                "sine_amplitude_range": list(self.type1.sine_amplitude_range)
                if self.type1.sine_amplitude_range else None,
                "sine_period_range": list(self.type1.sine_period_range)
                if self.type1.sine_period_range else None,
                "orientation_weights": list(self.type1.orientation_weights),
            },
            "type2": {
                "coverage_target": self.type2.coverage_target,
                "stroke_width": self.type2.stroke_width,
                "step_length": self.type2.step_length,
                "max_turn": self.type2.max_turn,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        t1 = d.get("type1", {})
        t2 = d.get("type2", {})
        return cls(
            kind=d.get("kind", "type1"),
            intensity=d.get("intensity", 1.0),
            replicate=d.get("replicate", 1),
            type1=Type1Params(
                min_elems=t1.get("min_elems", 1),
                max_elems=t1.get("max_elems", 3),
                line_thickness=t1.get("line_thickness", 1),
                sine_amplitude_range=tuple(t1["sine_amplitude_range"])
                if t1.get("sine_amplitude_range") else None,
                sine_period_range=tuple(t1["sine_period_range"])
                if t1.get("sine_period_range") else None,
                orientation_weights=tuple(t1.get("orientation_weights", (1.0, 1.0, 1.0))),
            ),
            type2=Type2Params(
                coverage_target=t2.get("coverage_target", 0.5),
                stroke_width=t2.get("stroke_width", 2),
                step_length=t2.get("step_length", 1.0),
                max_turn=t2.get("max_turn", 0.5),
            ),
        )


def _check_size(image: np.ndarray):
    h, w = image.shape
    if h < 4 or w < 4:
        raise ValueError(f"image {w}x{h} too small to corrupt (minimum 4x4)")


def _stamp_rows(mask, row, thickness):
    h = mask.shape[0]
    mask[max(row, 0):min(row + thickness, h), :] = True


def _stamp_cols(mask, col, thickness):
    w = mask.shape[1]
    mask[:, max(col, 0):min(col + thickness, w)] = True


def corrupt_type1(image: np.ndarray, spec: NoiseSpec, rng: Rng) -> np.ndarray:
    """Overlay 1..k full-span lines / sine curves; draw order is fixed
    (count, then per element: orientation, then its parameters) so a given
    rng state always yields the same corruption."""
    _check_size(image)
    h, w = image.shape
    p = spec.type1
    amp_lo, amp_hi = p.sine_amplitude_range or (2.0, h / 4.0)
    per_lo, per_hi = p.sine_period_range or (8.0, float(w))
    weights = np.asarray(p.orientation_weights, dtype=np.float64)
    cum = np.cumsum(weights / weights.sum())

    mask = np.zeros((h, w), dtype=bool)
    k = rng.randint(p.min_elems, p.max_elems)
    for _ in range(k):
        u = rng.next_f64()
        if u < cum[0]:
            _stamp_rows(mask, rng.randint(0, h - 1), p.line_thickness)
        elif u < cum[1]:
            _stamp_cols(mask, rng.randint(0, w - 1), p.line_thickness)
        else:
            amp = rng.uniform(amp_lo, amp_hi)
            period = rng.uniform(per_lo, per_hi)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            lo, hi = math.ceil(amp), h - 1 - math.ceil(amp)
            y0 = rng.uniform(lo, hi) if hi > lo else (h - 1) / 2.0
            for x in range(w):
                y = int(round(y0 + amp * math.sin(2.0 * math.pi * x / period + phase)))
                y = min(max(y, 0), h - 1)
                mask[y:min(y + p.line_thickness, h), x] = True
    out = np.maximum(image, mask * spec.intensity)
    return np.clip(out, 0.0, 1.0)


def corrupt_type2(image: np.ndarray, spec: NoiseSpec, rng: Rng) -> np.ndarray:
    """Random-walk strokes accumulated until mask coverage reaches the
    target fraction of pixels."""
    _check_size(image)
    h, w = image.shape
    p = spec.type2
    need = p.coverage_target * h * w
    mask = np.zeros((h, w), dtype=bool)
    covered = 0
    attempts = 0
    sw = p.stroke_width
    while covered < need:
        attempts += 1
        if attempts > 10 * h * w:
            raise RuntimeError(
                f"type 2 noise failed to reach coverage {p.coverage_target} "
                f"after {attempts - 1} strokes"
            )
        x = rng.uniform(0.0, w - 1.0)
        y = rng.uniform(0.0, h - 1.0)
        heading = rng.uniform(0.0, 2.0 * math.pi)
        length = rng.randint(w // 2, 2 * w)
        for _ in range(length):
            heading += rng.uniform(-p.max_turn, p.max_turn)
            x = min(max(x + p.step_length * math.cos(heading), 0.0), w - 1.0)
            y = min(max(y + p.step_length * math.sin(heading), 0.0), h - 1.0)
            iy, ix = int(round(y)), int(round(x))
            mask[iy:min(iy + sw, h), ix:min(ix + sw, w)] = True
        covered = int(mask.sum())
    out = np.maximum(image, mask * spec.intensity)
    return np.clip(out, 0.0, 1.0)


def corrupt_image(image: np.ndarray, spec: NoiseSpec, rng: Rng) -> np.ndarray:
    if spec.kind == "type1":
        return corrupt_type1(image, spec, rng)
    return corrupt_type2(image, spec, rng)


def corrupt_dataset(dataset: ImageDataset, spec: NoiseSpec, seed: int) -> np.ndarray:
    """Corrupt every image independently; returns (N*replicate)×D noisy rows.

    Output row i is source image i // replicate corrupted under child seed
    derive_seed(seed, i), so the corpus is order-independent and any row
    can be regenerated in isolation.
    """
    r = spec.replicate
    n_out = dataset.n * r
    out = np.empty((n_out, dataset.width * dataset.height))
    for i in range(n_out):
        img = dataset.images[i // r].reshape(dataset.height, dataset.width)
        out[i] = corrupt_image(img, spec, Rng(derive_seed(seed, i))).ravel()
    return out
