"""Dense float64 matrix helpers and a deterministic, portable RNG.

Matrices are plain 2-D ``numpy.ndarray`` objects with dtype float64,
row-major, rows = examples and cols = features. The helpers here wrap
numpy with explicit shape checks so dimension bugs fail loudly instead
of broadcasting silently. All functions are pure: inputs are never
mutated.

Randomness everywhere in this package flows through :class:`Rng`, a
splitmix64 generator. Same seed, same stream, on every platform; numpy's
global RNG is never used by library code.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# Largest float64 strictly below 1; sigmoid outputs are clipped into the
# open interval (0, 1) so downstream logs stay finite.
_ONE_MINUS = np.nextafter(1.0, 0.0)
_ZERO_PLUS = np.nextafter(0.0, 1.0)


class ShapeError(ValueError):
    """Raised when matrix operands have incompatible shapes."""


def _require_2d(a: np.ndarray, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a (m×k) and b (k×n)."""
    a = _require_2d(a, "a")
    b = _require_2d(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} x {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Elementwise logistic function, clipped into the open interval (0, 1).

    Uses the two-branch form so exp() never sees a large positive
    argument; the clip only matters where float64 would round the
    true value to exactly 0.0 or 1.0.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return np.clip(out, _ZERO_PLUS, _ONE_MINUS)


def transpose(a: np.ndarray) -> np.ndarray:
    return _require_2d(a, "a").T.copy()


def _same_shape(a: np.ndarray, b: np.ndarray, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes differ, {a.shape} vs {b.shape}")


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = _require_2d(a, "a")
    b = _require_2d(b, "b")
    _same_shape(a, b, "add")
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = _require_2d(a, "a")
    b = _require_2d(b, "b")
    _same_shape(a, b, "sub")
    return a - b


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = _require_2d(a, "a")
    b = _require_2d(b, "b")
    _same_shape(a, b, "hadamard")
    return a * b


def add_row_broadcast(a: np.ndarray, row: np.ndarray) -> np.ndarray:
    """Add a 1×cols row vector to every row of a."""
    a = _require_2d(a, "a")
    row = _require_2d(row, "row")
    if row.shape != (1, a.shape[1]):
        raise ShapeError(
            f"add_row_broadcast: row shape {row.shape} does not match (1, {a.shape[1]})"
        )
    return a + row


def sum_rows(a: np.ndarray) -> np.ndarray:
    """Column sums, returned as a 1×cols matrix."""
    a = _require_2d(a, "a")
    return a.sum(axis=0, keepdims=True)


def argmax_rows(a: np.ndarray) -> np.ndarray:
    """Per-row argmax; ties break to the lowest index."""
    a = _require_2d(a, "a")
    return np.argmax(a, axis=1)


def assert_finite(a: np.ndarray, context: str):
    """Raise FloatingPointError if a contains NaN or Inf."""
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"non-finite values in {context}")


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def derive_seed(parent_seed: int, index: int) -> int:
    """Child seed for worker/image `index`: the (index+1)-th raw output of
    a splitmix64 generator seeded with parent_seed."""
    state = (parent_seed + (index + 1) * _GOLDEN) & _MASK64
    return _mix(state)


class Rng:
    """splitmix64 generator: state advances by a fixed odd constant and the
    output is a two-round xor-shift-multiply mix of the state."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & _MASK64
        return _mix(self.state)

    def next_f64(self) -> float:
        """Uniform in [0, 1): the top 53 bits of the next output."""
        return (self.next_u64() >> 11) * 2.0 ** -53

    def next_f64_array(self, n: int) -> np.ndarray:
        """n uniform draws, bit-identical to n sequential next_f64() calls.

        The state recurrence is a plain addition, so the n successor
        states can be formed in one vectorized pass.
        """
        if n == 0:
            return np.zeros(0)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(_GOLDEN)
        z = (states ^ (states >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * _GOLDEN) & _MASK64
        return (z >> np.uint64(11)).astype(np.float64) * 2.0 ** -53

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.next_f64()

    def uniform_array(self, n: int, lo: float, hi: float) -> np.ndarray:
        return lo + (hi - lo) * self.next_f64_array(n)

    def randint(self, lo: int, hi: int) -> int:
        """Uniform integer in {lo, ..., hi}, endpoints inclusive."""
        if hi < lo:
            raise ValueError(f"randint: empty range [{lo}, {hi}]")
        k = lo + int(self.next_f64() * (hi - lo + 1))
        return min(k, hi)

    def fork(self, index: int) -> "Rng":
        """Independent child generator; see derive_seed."""
        return Rng(derive_seed(self.state, index))
