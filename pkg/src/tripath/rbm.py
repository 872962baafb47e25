"""Bernoulli-Bernoulli restricted Boltzmann machines trained with one-step
contrastive divergence, stacked greedily for layer-wise initialization.

The negative phase uses probability (not sampled) reconstructions for both
v1 and h1, the lowest-variance standard choice. Momentum and weight decay
are deliberately left out; fine-tuning dominates final quality.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .numerics import Rng, ShapeError, assert_finite, sigmoid

STACK_MAGIC = b"RBS1"


class StackFormatError(ValueError):
    """Malformed RBM-stack container (bad magic or truncation)."""


@dataclass(frozen=True)
class Rbm:
    """One pretraining block: weights D×H plus visible/hidden bias rows."""

    w: np.ndarray
    b_vis: np.ndarray
    b_hid: np.ndarray

    def __post_init__(self):
        d, h = self.w.shape
        if self.b_vis.shape != (1, d) or self.b_hid.shape != (1, h):
            raise ShapeError(
                f"inconsistent Rbm shapes: w {self.w.shape}, "
                f"b_vis {self.b_vis.shape}, b_hid {self.b_hid.shape}"
            )


def prop_up(rbm: Rbm, v: np.ndarray) -> np.ndarray:
    """p(h=1 | v) for a batch of visible rows."""
    if v.shape[1] != rbm.w.shape[0]:
        raise ShapeError(f"prop_up: v {v.shape} vs w {rbm.w.shape}")
    return sigmoid(v @ rbm.w + rbm.b_hid)


def prop_down(rbm: Rbm, h: np.ndarray) -> np.ndarray:
    """p(v=1 | h), the symmetric conditional through w transposed."""
    if h.shape[1] != rbm.w.shape[1]:
        raise ShapeError(f"prop_down: h {h.shape} vs w {rbm.w.shape}")
    return sigmoid(h @ rbm.w.T + rbm.b_vis)


def reconstruction_cross_entropy(v0: np.ndarray, v1: np.ndarray) -> float:
    """Mean per-example Bernoulli cross-entropy between data and its
    one-step reconstruction."""
    ce = -(v0 * np.log(v1) + (1.0 - v0) * np.log(1.0 - v1)).sum(axis=1)
    return float(ce.mean())


def cd1_update(rbm: Rbm, v0: np.ndarray, lr: float, rng: Rng):
    """One CD-1 step on a batch; returns (updated Rbm, reconstruction CE).

    Positive statistics use p(h|v0); the chain samples h0 once and then
    stays on probabilities. lr=0 leaves the parameters bit-identical.
    """
    batch = v0.shape[0]
    ph0 = prop_up(rbm, v0)
    u = rng.next_f64_array(batch * ph0.shape[1]).reshape(ph0.shape)
    h0 = (u < ph0).astype(np.float64)
    v1 = prop_down(rbm, h0)
    h1 = prop_up(rbm, v1)

    dw = (v0.T @ ph0 - v1.T @ h1) / batch
    db_vis = (v0 - v1).mean(axis=0, keepdims=True)
    db_hid = (ph0 - h1).mean(axis=0, keepdims=True)

    ce = reconstruction_cross_entropy(v0, v1)
    if lr == 0.0:
        return rbm, ce
    new = Rbm(rbm.w + lr * dw, rbm.b_vis + lr * db_vis, rbm.b_hid + lr * db_hid)
    assert_finite(new.w, "CD-1 weight update")
    return new, ce


def init_rbm(n_vis: int, n_hid: int, rng: Rng) -> Rbm:
    """Weights uniform in (-0.1, 0.1) drawn row-major; biases zero."""
    w = rng.uniform_array(n_vis * n_hid, -0.1, 0.1).reshape(n_vis, n_hid)
    return Rbm(w, np.zeros((1, n_vis)), np.zeros((1, n_hid)))


def pretrain_stack(layer_sizes, data: np.ndarray, epochs: int, lr: float,
                   batch_size: int, seed: int, report=None):
    """Greedy layer-wise pretraining.

    Trains an RBM per consecutive size pair, feeding p(h|v) activations
    forward as the next layer's data. Batches run in file order (no
    shuffling) so the whole procedure is a pure function of its inputs.
    report, if given, is called as report(layer, epoch, mean_ce).
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least [visible, hidden] layer sizes")
    if data.shape[1] != layer_sizes[0]:
        raise ShapeError(
            f"data has {data.shape[1]} columns, expected {layer_sizes[0]}"
        )
    rng = Rng(seed)
    rbms = []
    x = data
    for layer, (d, h) in enumerate(zip(layer_sizes[:-1], layer_sizes[1:])):
        rbm = init_rbm(d, h, rng)
        n = x.shape[0]
        for epoch in range(epochs):
            ces = []
            for start in range(0, n, batch_size):
                batch = x[start:start + batch_size]
                try:
                    rbm, ce = cd1_update(rbm, batch, lr, rng)
                except FloatingPointError as exc:
                    raise FloatingPointError(
                        f"layer {layer}, epoch {epoch}, batch at row {start}: {exc}"
                    ) from exc
                ces.append(ce)
            if report is not None:
                report(layer, epoch, float(np.mean(ces)))
        rbms.append(rbm)
        x = prop_up(rbm, x)
    return rbms


def save_stack(rbms, path):
    """Stack container: magic "RBS1", u32 LE count, per-RBM u32 LE
    visible/hidden dims, then per-RBM 64-bit LE reals (w row-major,
    b_vis, b_hid)."""
    with open(path, "wb") as f:
        f.write(STACK_MAGIC)
        f.write(struct.pack("<I", len(rbms)))
        for r in rbms:
            f.write(struct.pack("<II", r.w.shape[0], r.w.shape[1]))
        for r in rbms:
            f.write(r.w.astype("<f8").tobytes())
            f.write(r.b_vis.astype("<f8").tobytes())
            f.write(r.b_hid.astype("<f8").tobytes())


def load_stack(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != STACK_MAGIC:
        raise StackFormatError(f"{path}: bad magic {data[:4]!r}")
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    dims = []
    for _ in range(count):
        if pos + 8 > len(data):
            raise StackFormatError(f"{path}: truncated header")
        dims.append(struct.unpack_from("<II", data, pos))
        pos += 8
    expected = pos + sum((d * h + d + h) * 8 for d, h in dims)
    if expected != len(data):
        raise StackFormatError(
            f"{path}: expected {expected} bytes, got {len(data)}"
        )
    rbms = []
    for d, h in dims:
        w = np.frombuffer(data, "<f8", d * h, pos).reshape(d, h).copy()
        pos += d * h * 8
        b_vis = np.frombuffer(data, "<f8", d, pos).reshape(1, d).copy()
        pos += d * 8
        b_hid = np.frombuffer(data, "<f8", h, pos).reshape(1, h).copy()
        pos += h * 8
        rbms.append(Rbm(w, b_vis, b_hid))
    return rbms
