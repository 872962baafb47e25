"""Fine-tuning optimizers: L-BFGS with Armijo backtracking, and minibatch
gradient descent with classical momentum.

Both optimize the MEAN joint loss (loss / N) so that step sizes do not
depend on the dataset size; this only rescales the sum-form objective.
L-BFGS runs on a fixed mega-batch (the first `megabatch` rows) by
default, which keeps desk-scale wall time in minutes; set megabatch=None
for true full-batch. Optimizers never mutate the net they are given --
they return a new one.
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .network import TriPathNet, flatten, loss_and_gradient, unflatten
from .numerics import Rng


class DivergenceError(RuntimeError):
    """SGD loss blew past the abort threshold for several epochs."""


@dataclass
class SgdConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 100
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        # learning_rate == 0 is the documented degenerate no-op
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class LbfgsConfig:
    memory: int = 10
    max_iterations: int = 200
    gradient_tolerance: float = 1e-5  # on the infinity norm
    c1: float = 1e-4
    backtrack_factor: float = 0.5
    max_backtracks: int = 30
    megabatch: int = 10000  # None = full batch

    def __post_init__(self):
        if self.memory < 1:
            raise ValueError(f"memory must be >= 1, got {self.memory}")
        if not 0.0 < self.c1 < 1.0:
            raise ValueError(f"c1 must be in (0, 1), got {self.c1}")
        if not 0.0 < self.backtrack_factor < 1.0:
            raise ValueError("backtrack_factor must be in (0, 1)")


@dataclass
class HistoryRecord:
    iteration: int
    loss: float
    image_term: float
    label_term: float
    seconds: float


@dataclass
class TrainHistory:
    """Per-evaluation training log; iterations are strictly increasing."""

    records: list = field(default_factory=list)
    status: str = "in_progress"

    def append(self, iteration, loss, image_term, label_term, seconds):
        if self.records and iteration <= self.records[-1].iteration:
            raise ValueError(
                f"iteration {iteration} not after {self.records[-1].iteration}"
            )
        self.records.append(
            HistoryRecord(iteration, loss, image_term, label_term, seconds))

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss

    def to_csv(self, path):
        with open(path, "w") as f:
            f.write("iteration,loss,image_term,label_term,seconds\n")
            for r in self.records:
                f.write(f"{r.iteration},{r.loss!r},{r.image_term!r},"
                        f"{r.label_term!r},{r.seconds:.3f}\n")


def _normalize(result):
    """Objectives return (loss, grad) or (loss, grad, (image, label))."""
    if len(result) == 2:
        loss, grad = result
        return float(loss), grad, (float("nan"), float("nan"))
    loss, grad, terms = result
    return float(loss), grad, (float(terms[0]), float(terms[1]))


def two_loop(grad: np.ndarray, pairs) -> np.ndarray:
    """Two-loop recursion: H @ grad for the implicit inverse-Hessian
    approximation built from (s, y) pairs, oldest first, with the
    standard gamma = s'y / y'y initial scaling."""
    q = grad.copy()
    alphas = []
    for s, y in reversed(pairs):
        rho = 1.0 / float(y @ s)
        a = rho * float(s @ q)
        q -= a * y
        alphas.append((rho, a))
    if pairs:
        s, y = pairs[-1]
        q *= float(s @ y) / float(y @ y)
    for (s, y), (rho, a) in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def lbfgs_minimize(objective, x0: np.ndarray, cfg: LbfgsConfig = None):
    """Minimize objective(x) -> (loss, grad[, terms]) from x0.

    Armijo backtracking from step 1.0; curvature pairs with s'y <= 1e-10
    are never incorporated, and such a violation also clears the stored
    memory -- without the Wolfe curvature condition a stale memory can
    freeze the direction entirely (observed on Rosenbrock), and a restart
    from steepest descent recovers. Stops on the gradient tolerance, the
    iteration budget, or a failed line search (warning, returns
    best-so-far). Accepted losses are monotone nonincreasing.
    """
    cfg = cfg or LbfgsConfig()
    start = time.perf_counter()
    x = np.array(x0, dtype=np.float64)
    f, g, terms = _normalize(objective(x))
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise FloatingPointError("objective is non-finite at the starting point")

    history = TrainHistory()
    history.append(0, f, terms[0], terms[1], time.perf_counter() - start)
    pairs = []

    for it in range(1, cfg.max_iterations + 1):
        if np.max(np.abs(g)) <= cfg.gradient_tolerance:
            history.status = "converged"
            return x, history

        d = -two_loop(g, pairs)
        gd = float(g @ d)
        if gd >= 0.0:  # not a descent direction; fall back to steepest descent
            pairs.clear()
            d = -g
            gd = -float(g @ g)

        step = 1.0
        accepted = None
        for _ in range(cfg.max_backtracks + 1):
            x_new = x + step * d
            f_new, g_new, terms_new = _normalize(objective(x_new))
            if np.isfinite(f_new) and f_new <= f + cfg.c1 * step * gd:
                accepted = (x_new, f_new, g_new, terms_new)
                break
            step *= cfg.backtrack_factor
        if accepted is None:
            warnings.warn(f"L-BFGS line search failed at iteration {it}; "
                          f"returning best point so far")
            history.status = "line_search_failed"
            return x, history

        x_new, f_new, g_new, terms_new = accepted
        s = x_new - x
        y = g_new - g
        if float(s @ y) > 1e-10:
            pairs.append((s, y))
            if len(pairs) > cfg.memory:
                pairs.pop(0)
        else:
            pairs.clear()
        x, f, g, terms = x_new, f_new, g_new, terms_new
        history.append(it, f, terms[0], terms[1], time.perf_counter() - start)

    history.status = "max_iterations" if np.max(np.abs(g)) > cfg.gradient_tolerance \
        else "converged"
    return x, history


def _net_objective(template: TriPathNet, triplets, image_term=True,
                   label_term=True):
    """Mean-loss objective over a triplet batch for a fixed architecture."""
    n = triplets.n

    def objective(pv):
        net = unflatten(template, pv)
        lb, grad = loss_and_gradient(net, triplets, image_term, label_term)
        return lb.total / n, grad / n, (lb.image / n, lb.label / n)

    return objective


def _select_megabatch(triplets, megabatch):
    if megabatch is None or triplets.n <= megabatch:
        return triplets
    return triplets.subset(np.arange(megabatch))


def lbfgs_train(net: TriPathNet, triplets, cfg: LbfgsConfig = None,
                image_term=True, label_term=True):
    """Fine-tune a net with L-BFGS on the mean joint loss; returns a new
    net plus its TrainHistory."""
    cfg = cfg or LbfgsConfig()
    batch = _select_megabatch(triplets, cfg.megabatch)
    objective = _net_objective(net, batch, image_term, label_term)
    x, history = lbfgs_minimize(objective, flatten(net), cfg)
    return unflatten(net, x), history


def sgd_train(net: TriPathNet, triplets, cfg: SgdConfig = None,
              image_term=True, label_term=True):
    """Minibatch gradient descent with classical momentum.

    Minibatches are reshuffled every epoch (seeded); the history records
    the full-batch mean loss once per epoch. Aborts with DivergenceError
    when the epoch loss exceeds 10x the initial loss three epochs running.
    """
    cfg = cfg or SgdConfig()
    start = time.perf_counter()
    n = triplets.n
    full = _net_objective(net, triplets, image_term, label_term)

    x = flatten(net)
    velocity = np.zeros_like(x)
    rng = Rng(cfg.seed)

    f0, _, terms0 = _normalize(full(x))
    history = TrainHistory()
    history.append(0, f0, terms0[0], terms0[1], time.perf_counter() - start)

    bad_epochs = 0
    for epoch in range(1, cfg.epochs + 1):
        order = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = rng.randint(0, i)
            order[i], order[j] = order[j], order[i]
        for lo in range(0, n, cfg.batch_size):
            batch = triplets.subset(order[lo:lo + cfg.batch_size])
            _, grad = loss_and_gradient(unflatten(net, x), batch,
                                        image_term, label_term)[:2]
            velocity = cfg.momentum * velocity - cfg.learning_rate * (grad / batch.n)
            x = x + velocity

        f, _, terms = _normalize(full(x))
        history.append(epoch, f, terms[0], terms[1],
                       time.perf_counter() - start)
        bad_epochs = bad_epochs + 1 if f > 10.0 * f0 else 0
        if bad_epochs >= 3:
            history.status = "diverged"
            raise DivergenceError(
                f"loss {f:.4g} stayed above 10x the initial {f0:.4g} for "
                f"3 consecutive epochs (epoch {epoch}); try a lower "
                f"learning rate"
            )

    history.status = "completed"
    return unflatten(net, x), history


@dataclass
class PipelineResult:
    """Two-stage baseline: a lam=0 denoiser, then a classifier trained on
    its denoised outputs (label loss only; clean images unused in stage 2)."""

    denoiser: TriPathNet
    classifier: TriPathNet
    history_denoiser: TrainHistory
    history_classifier: TrainHistory

    def predict(self, v_noisy):
        from .network import decode_image, decode_label, encode

        denoised = decode_image(self.denoiser, encode(self.denoiser, v_noisy))
        scores = decode_label(self.classifier, encode(self.classifier, denoised))
        return denoised, np.argmax(scores, axis=1)


def pipeline_baseline_train(init_net: TriPathNet, triplets,
                            cfg=None) -> PipelineResult:
    """Train the separate restoration->recognition pipeline from the same
    initialization and corpus as a joint run.

    Stage 1 clones init_net with lam=0 and trains the pure denoiser.
    Stage 2 starts again from init_net and trains only the label pathway
    on stage 1's denoised training images.
    """
    from .network import TriPathNet as Net
    from .network import decode_image, encode

    stage1 = Net(init_net.encoder, init_net.decoder_img, init_net.decoder_lab, 0.0)
    denoiser, hist1 = _dispatch_train(stage1, triplets, cfg)

    from .dataio import TripletDataset
    denoised = decode_image(denoiser, encode(denoiser, triplets.noisy))
    stage2_data = TripletDataset(triplets.clean, denoised,
                                 triplets.labels_onehot,
                                 triplets.width, triplets.height)
    stage2 = Net(init_net.encoder, init_net.decoder_img, init_net.decoder_lab, 1.0)
    classifier, hist2 = _dispatch_train(stage2, stage2_data, cfg,
                                        image_term=False)
    return PipelineResult(denoiser, classifier, hist1, hist2)


def _dispatch_train(net, triplets, cfg, image_term=True, label_term=True):
    if cfg is None or isinstance(cfg, LbfgsConfig):
        return lbfgs_train(net, triplets, cfg, image_term, label_term)
    if isinstance(cfg, SgdConfig):
        return sgd_train(net, triplets, cfg, image_term, label_term)
    raise TypeError(f"unknown optimizer config {type(cfg).__name__}")
