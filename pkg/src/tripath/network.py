"""The 3-pathway joint model: a shared sigmoid encoder feeding an
image-reconstruction decoder and a label decoder.

Both decoders hang off the same top representation h, and the training
objective is the sum of two Bernoulli cross-entropies,

    loss = BCE(clean, decoded image) + lam * BCE(onehot, decoded label),

summed over pixels/classes and examples (natural log, predictions clamped
to [1e-7, 1-1e-7] inside the log). The label head is K independent
sigmoids, not a softmax; argmax picks the class. Backpropagation is exact:
the gradient arriving at h is the sum of the two pathway contributions,
and sigmoid-output/cross-entropy pairs use the (prediction - target)
output delta.

Parameters flatten into a single vector in a fixed order -- encoder
layers, then image decoder, then label decoder; within a layer the weight
matrix row-major, then the bias row -- which is the interface the
optimizers work against.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import Rng, ShapeError, assert_finite, sigmoid

CHECKPOINT_MAGIC = b"TPN1"
LOG_CLAMP = 1e-7


class CheckpointError(ValueError):
    """Malformed checkpoint file (bad magic, counts, or truncation)."""


@dataclass(frozen=True)
class Layer:
    """One affine+sigmoid stage: w is in_dim x out_dim, b is 1 x out_dim."""

    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if self.b.shape != (1, self.w.shape[1]):
            raise ShapeError(
                f"layer bias {self.b.shape} does not match weights {self.w.shape}"
            )

    @property
    def in_dim(self) -> int:
        return self.w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class ArchSpec:
    """Architecture description: encoder sizes (input first), class count,
    and whether the label decoder mirrors the full image decoder ("deep")
    or is a single layer on top of h ("shallow")."""

    layer_sizes: tuple
    num_classes: int
    label_head: str = "deep"

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        if len(self.layer_sizes) < 2:
            raise ValueError("need at least input and one hidden size")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.label_head not in ("deep", "shallow"):
            raise ValueError(f"unknown label_head {self.label_head!r}")


@dataclass(frozen=True)
class TriPathNet:
    """Shared encoder plus two decoders; lam weights the label loss
    (lambda in the objective -- renamed because of the keyword)."""

    encoder: tuple
    decoder_img: tuple
    decoder_lab: tuple
    lam: float

    def __post_init__(self):
        object.__setattr__(self, "encoder", tuple(self.encoder))
        object.__setattr__(self, "decoder_img", tuple(self.decoder_img))
        object.__setattr__(self, "decoder_lab", tuple(self.decoder_lab))
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        h_dim = self.encoder[-1].out_dim
        if self.decoder_img[0].in_dim != h_dim or self.decoder_lab[0].in_dim != h_dim:
            raise ShapeError(
                f"decoders must consume the shared representation: h={h_dim}, "
                f"decoder_img takes {self.decoder_img[0].in_dim}, "
                f"decoder_lab takes {self.decoder_lab[0].in_dim}"
            )
        for name, layers in (("encoder", self.encoder),
                             ("decoder_img", self.decoder_img),
                             ("decoder_lab", self.decoder_lab)):
            for a, b in zip(layers, layers[1:]):
                if a.out_dim != b.in_dim:
                    raise ShapeError(
                        f"{name}: layer output {a.out_dim} feeds layer "
                        f"input {b.in_dim}"
                    )

    @property
    def input_dim(self) -> int:
        return self.encoder[0].in_dim

    @property
    def num_classes(self) -> int:
        return self.decoder_lab[-1].out_dim


@dataclass
class LossBreakdown:
    """Joint loss with its two raw components. total == image + lam*label
    (ablated terms contribute zero to total but are still reported)."""

    total: float
    image: float
    label: float


def _apply(layer: Layer, x: np.ndarray) -> np.ndarray:
    if x.shape[1] != layer.in_dim:
        raise ShapeError(f"layer expects {layer.in_dim} inputs, got {x.shape}")
    return sigmoid(x @ layer.w + layer.b)


def _forward(layers, x: np.ndarray):
    """All activations through a pathway; acts[0] is the input itself."""
    acts = [x]
    for layer in layers:
        acts.append(_apply(layer, acts[-1]))
    return acts


def encode(net: TriPathNet, v_noisy: np.ndarray) -> np.ndarray:
    return _forward(net.encoder, np.asarray(v_noisy, dtype=np.float64))[-1]


def decode_image(net: TriPathNet, h: np.ndarray) -> np.ndarray:
    return _forward(net.decoder_img, h)[-1]


def decode_label(net: TriPathNet, h: np.ndarray) -> np.ndarray:
    return _forward(net.decoder_lab, h)[-1]


def predict(net: TriPathNet, v_noisy: np.ndarray):
    """Encode once, decode both heads; returns (v_hat, class indices)."""
    h = encode(net, v_noisy)
    v_hat = decode_image(net, h)
    classes = np.argmax(decode_label(net, h), axis=1)
    return v_hat, classes


def _bce_sum(target: np.ndarray, pred: np.ndarray) -> float:
    p = np.clip(pred, LOG_CLAMP, 1.0 - LOG_CLAMP)
    return float(-(target * np.log(p) + (1.0 - target) * np.log(1.0 - p)).sum())


def joint_loss(net: TriPathNet, triplets, image_term=True,
               label_term=True) -> LossBreakdown:
    """Sum-form joint objective over the whole batch.

    The term flags ablate a component from the total (used by the
    pipeline baseline and by gradient-decomposition tests); the breakdown
    always reports both raw sums, with the label sum unweighted by lam.
    """
    h = encode(net, triplets.noisy)
    image = _bce_sum(triplets.clean, decode_image(net, h))
    label = _bce_sum(triplets.labels_onehot, decode_label(net, h))
    total = (image if image_term else 0.0) + net.lam * (label if label_term else 0.0)
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite joint loss: {total}")
    return LossBreakdown(total, image, label)


def _backprop_pathway(layers, acts, delta):
    """Walk a decoder (or encoder) backwards from the pre-activation delta
    at its output. Returns per-layer (dw, db) in forward order plus the
    gradient w.r.t. the pathway input."""
    grads = [None] * len(layers)
    for j in range(len(layers) - 1, -1, -1):
        grads[j] = (acts[j].T @ delta, delta.sum(axis=0, keepdims=True))
        delta = delta @ layers[j].w.T
        if j > 0:
            delta = delta * acts[j] * (1.0 - acts[j])
    return grads, delta


def _zero_grads(layers):
    return [(np.zeros_like(l.w), np.zeros_like(l.b)) for l in layers]


def loss_and_gradient(net: TriPathNet, triplets, image_term=True,
                      label_term=True):
    """One forward/backward pass; returns (LossBreakdown, flat gradient).

    The gradient flowing into the shared h is the sum of the
    image-decoder contribution and the lam-weighted label-decoder
    contribution. Log clamping is treated as identity in the backward
    pass, so output deltas are simply (prediction - target).
    """
    v = np.asarray(triplets.noisy, dtype=np.float64)
    enc_acts = _forward(net.encoder, v)
    h = enc_acts[-1]
    img_acts = _forward(net.decoder_img, h)
    lab_acts = _forward(net.decoder_lab, h)

    image = _bce_sum(triplets.clean, img_acts[-1])
    label = _bce_sum(triplets.labels_onehot, lab_acts[-1])
    total = (image if image_term else 0.0) + net.lam * (label if label_term else 0.0)
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite joint loss: {total}")

    dh = np.zeros_like(h)
    if image_term:
        grads_img, dh_img = _backprop_pathway(
            net.decoder_img, img_acts, img_acts[-1] - triplets.clean)
        dh = dh + dh_img
    else:
        grads_img = _zero_grads(net.decoder_img)
    if label_term:
        grads_lab, dh_lab = _backprop_pathway(
            net.decoder_lab, lab_acts,
            net.lam * (lab_acts[-1] - triplets.labels_onehot))
        dh = dh + dh_lab
    else:
        grads_lab = _zero_grads(net.decoder_lab)

    grads_enc, _ = _backprop_pathway(net.encoder, enc_acts[:-1],
                                     dh * h * (1.0 - h))

    flat = _flatten_grads(grads_enc + grads_img + grads_lab)
    assert_finite(flat, "joint-loss gradient")
    return LossBreakdown(total, image, label), flat


def backward(net: TriPathNet, triplets, image_term=True,
             label_term=True) -> np.ndarray:
    """Exact gradient of joint_loss in ParamVector order."""
    return loss_and_gradient(net, triplets, image_term, label_term)[1]


def _flatten_grads(pairs) -> np.ndarray:
    parts = []
    for dw, db in pairs:
        parts.append(dw.ravel())
        parts.append(db.ravel())
    return np.concatenate(parts)


def _all_layers(net: TriPathNet):
    return list(net.encoder) + list(net.decoder_img) + list(net.decoder_lab)


def param_count(net: TriPathNet) -> int:
    return sum(l.w.size + l.b.size for l in _all_layers(net))


def flatten(net: TriPathNet) -> np.ndarray:
    """Canonical parameter vector: encoder, decoder_img, decoder_lab;
    per layer the weights row-major then the bias row."""
    parts = []
    for layer in _all_layers(net):
        parts.append(layer.w.ravel())
        parts.append(layer.b.ravel())
    return np.concatenate(parts)


def unflatten(template: TriPathNet, pv: np.ndarray) -> TriPathNet:
    """Rebuild a net with template's architecture and lam from a flat
    vector; inverse of flatten."""
    pv = np.asarray(pv, dtype=np.float64)
    expected = param_count(template)
    if pv.shape != (expected,):
        raise ShapeError(f"parameter vector has shape {pv.shape}, "
                         f"expected ({expected},)")
    pos = 0

    def take(shape):
        nonlocal pos
        n = shape[0] * shape[1]
        out = pv[pos:pos + n].reshape(shape).copy()
        pos += n
        return out

    def rebuild(layers):
        return tuple(Layer(take(l.w.shape), take(l.b.shape)) for l in layers)

    return TriPathNet(rebuild(template.encoder), rebuild(template.decoder_img),
                      rebuild(template.decoder_lab), template.lam)


def _mirror_layers(rbm_stack):
    """Transposed-mirror decoder initialization: decoder layer j gets the
    transpose of encoder layer L+1-j with that RBM's visible biases."""
    return [Layer(r.w.T.copy(), r.b_vis.copy()) for r in reversed(rbm_stack)]


def _uniform_layer(rng: Rng, in_dim: int, out_dim: int) -> Layer:
    w = rng.uniform_array(in_dim * out_dim, -0.1, 0.1).reshape(in_dim, out_dim)
    return Layer(w, np.zeros((1, out_dim)))


def init_from_pretrain(rbm_stack, arch: ArchSpec, lam=1.0,
                       seed=0) -> TriPathNet:
    """Build the joint net from a greedily pretrained RBM stack.

    Encoder layers take (w, b_hid) directly; the image decoder unrolls the
    stack with transposed weights and visible biases; the label decoder
    shares the mirrored prefix and gets a fresh uniform(-0.1, 0.1) final
    layer sized to the class count. All copies are untied.
    """
    sizes = arch.layer_sizes
    if len(rbm_stack) != len(sizes) - 1:
        raise ShapeError(f"stack has {len(rbm_stack)} RBMs for "
                         f"{len(sizes) - 1} encoder layers")
    for r, (d, h) in zip(rbm_stack, zip(sizes, sizes[1:])):
        if r.w.shape != (d, h):
            raise ShapeError(f"RBM weights {r.w.shape} do not match "
                             f"layer {d}->{h}")

    rng = Rng(seed)
    encoder = tuple(Layer(r.w.copy(), r.b_hid.copy()) for r in rbm_stack)
    decoder_img = tuple(_mirror_layers(rbm_stack))
    if arch.label_head == "deep":
        prefix = _mirror_layers(rbm_stack[1:])  # stops one level short of D
        final = _uniform_layer(rng, sizes[1], arch.num_classes)
        decoder_lab = tuple(prefix + [final])
    else:
        decoder_lab = (_uniform_layer(rng, sizes[-1], arch.num_classes),)
    return TriPathNet(encoder, decoder_img, decoder_lab, lam)


def init_random(arch: ArchSpec, lam=1.0, seed=0) -> TriPathNet:
    """Uniform(-0.1, 0.1) weights and zero biases everywhere, generated in
    ParamVector order so the draw sequence is documented."""
    sizes = arch.layer_sizes
    rng = Rng(seed)
    encoder = tuple(_uniform_layer(rng, d, h) for d, h in zip(sizes, sizes[1:]))
    rev = list(reversed(sizes))
    decoder_img = tuple(_uniform_layer(rng, d, h) for d, h in zip(rev, rev[1:]))
    if arch.label_head == "deep":
        lab_sizes = rev[:-1] + [arch.num_classes]
    else:
        lab_sizes = [sizes[-1], arch.num_classes]
    decoder_lab = tuple(_uniform_layer(rng, d, h)
                        for d, h in zip(lab_sizes, lab_sizes[1:]))
    return TriPathNet(encoder, decoder_img, decoder_lab, lam)


def save(net: TriPathNet, path):
    """Checkpoint container: magic "TPN1"; u32 LE pathway count (3) and
    per-pathway layer counts; per-layer u32 in/out dims; parameters as
    64-bit LE reals in ParamVector order; lam as one more real."""
    pathways = (net.encoder, net.decoder_img, net.decoder_lab)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(pathways)))
        f.write(struct.pack("<3I", *(len(p) for p in pathways)))
        for p in pathways:
            for layer in p:
                f.write(struct.pack("<II", layer.in_dim, layer.out_dim))
        f.write(flatten(net).astype("<f8").tobytes())
        f.write(struct.pack("<d", net.lam))


def load(path) -> TriPathNet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:4]!r}")
    pos = 4

    def unpack(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError(f"{path}: truncated at byte {pos}")
        out = struct.unpack_from(fmt, data, pos)
        pos += size
        return out

    (n_pathways,) = unpack("<I")
    if n_pathways != 3:
        raise CheckpointError(f"{path}: expected 3 pathways, got {n_pathways}")
    counts = unpack("<3I")
    dims = [[unpack("<II") for _ in range(c)] for c in counts]

    n_params = sum(d * h + h for pathway in dims for d, h in pathway)
    payload = n_params * 8
    if pos + payload + 8 != len(data):
        raise CheckpointError(
            f"{path}: expected {pos + payload + 8} bytes total, got {len(data)}"
        )
    pv = np.frombuffer(data, dtype="<f8", count=n_params, offset=pos)
    pos += payload
    (lam,) = unpack("<d")

    def shapes_to_layers(pathway):
        return tuple(Layer(np.zeros((d, h)), np.zeros((1, h)))
                     for d, h in pathway)

    template = TriPathNet(*(shapes_to_layers(p) for p in dims), lam)
    return unflatten(template, pv.copy())
