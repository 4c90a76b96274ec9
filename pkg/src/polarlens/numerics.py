"""Dense numeric substrate shared by all model modules.

Matrices are plain C-order (row-major) float64 ``numpy.ndarray`` values;
nothing here mutates its inputs.  The module adds the three things numpy
does not give us directly:

* ``Rng`` -- a counter-based splitmix64 generator with Box-Muller gaussian
  draws.  The integer stream is identical on every platform; the float
  stream is identical for a given libm/numpy build, and block draws are
  bit-identical to one-at-a-time draws.
* shape-checked ``matmul`` and the standard stable activations,
* ``grad_check`` -- central-difference verification of hand-derived
  gradients.
"""

import math

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U64_GOLDEN = np.uint64(_GOLDEN)
_U64_30 = np.uint64(30)
_U64_27 = np.uint64(27)
_U64_31 = np.uint64(31)
_U64_11 = np.uint64(11)
_U64_MIX1 = np.uint64(_MIX1)
_U64_MIX2 = np.uint64(_MIX2)

_TWO_NEG53 = 2.0 ** -53


class ShapeError(ValueError):
    """Raised when operand shapes do not conform."""


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer (pure-python reference)."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def fnv1a64(text: str) -> int:
    """64-bit FNV-1a hash of a string; used to derive child seeds from tags."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK64
    return h


def derive_seed(master_seed: int, tag: str) -> int:
    """Deterministic child seed for (master seed, tag)."""
    return mix64((master_seed & _MASK64) ^ mix64(fnv1a64(tag)))


class Rng:
    """Counter-based splitmix64 stream with Box-Muller gaussians.

    Draw k of the stream is ``mix64(seed + (k+1) * golden)``; blocks are
    therefore vectorizable and bit-identical to sequential scalar draws.
    Gaussians come from Box-Muller pairs (r*cos, r*sin) on consecutive
    uniforms, with the second element of an odd draw cached for the next
    call, so the gaussian stream is also independent of block sizes.
    """

    def __init__(self, seed: int):
        self._seed = int(seed) & _MASK64
        self._counter = 0
        self._gauss_spare = None

    @property
    def seed(self) -> int:
        return self._seed

    def _raw_block(self, n: int) -> np.ndarray:
        """Next n raw uint64 outputs, advancing the counter."""
        start = self._counter
        self._counter += n
        idx = np.arange(start + 1, start + n + 1, dtype=np.uint64)
        z = np.uint64(self._seed) + idx * _U64_GOLDEN
        z = (z ^ (z >> _U64_30)) * _U64_MIX1
        z = (z ^ (z >> _U64_27)) * _U64_MIX2
        z = z ^ (z >> _U64_31)
        return z

    def uniform(self, size=None, low=0.0, high=1.0):
        """Uniform draws in [low, high); scalar when size is None."""
        n = 1 if size is None else int(np.prod(size))
        u = (self._raw_block(n) >> _U64_11).astype(np.float64) * _TWO_NEG53
        if low != 0.0 or high != 1.0:
            u = low + (high - low) * u
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def normal(self, size=None, mean=0.0, std=1.0):
        """Gaussian draws; scalar when size is None."""
        n = 1 if size is None else int(np.prod(size))
        out = np.empty(n, dtype=np.float64)
        pos = 0
        if self._gauss_spare is not None and n > 0:
            out[0] = self._gauss_spare
            self._gauss_spare = None
            pos = 1
        need = n - pos
        if need > 0:
            npairs = (need + 1) // 2
            u = self.uniform(size=2 * npairs)
            r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
            theta = (2.0 * math.pi) * u[1::2]
            z = np.empty(2 * npairs, dtype=np.float64)
            z[0::2] = r * np.cos(theta)
            z[1::2] = r * np.sin(theta)
            out[pos:] = z[:need]
            if need % 2 == 1:
                self._gauss_spare = float(z[need])
        if mean != 0.0 or std != 1.0:
            out = mean + std * out
        if size is None:
            return float(out[0])
        return out.reshape(size)

    def integers(self, n: int) -> int:
        """One draw uniform on {0, ..., n-1} (multiply-shift on the raw word)."""
        if n <= 0:
            raise ValueError("n must be positive")
        raw = int(self._raw_block(1)[0])
        return (raw * n) >> 64

    def shuffle(self, values) -> None:
        """In-place Fisher-Yates shuffle of a list or 1-d array."""
        for i in range(len(values) - 1, 0, -1):
            j = self.integers(i + 1)
            values[i], values[j] = values[j], values[i]

    def choice(self, values):
        return values[self.integers(len(values))]

    def spawn(self, tag: str) -> "Rng":
        """Independent child stream derived from (this seed, tag)."""
        return Rng(derive_seed(self._seed, tag))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit conformance check."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Logistic function, overflow-safe for any finite input."""
    x = np.asarray(x, dtype=np.float64)
    return np.exp(np.minimum(x, 0.0)) / (1.0 + np.exp(-np.abs(x)))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(np.asarray(x, dtype=np.float64))


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts 1-d (one row) or 2-d."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def activations(x: np.ndarray, kind: str) -> np.ndarray:
    """Dispatch on kind: 'sigmoid' | 'tanh' | 'softmax-rows'."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "softmax-rows":
        return softmax_rows(x)
    raise ValueError(f"unknown activation kind {kind!r}")


def grad_check(f, analytic_grad, point, epsilon=1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Per coordinate the error is |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8);
    the floor avoids 0/0 where both gradients vanish.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    point = np.asarray(point, dtype=np.float64).ravel()
    g_a = np.asarray(analytic_grad, dtype=np.float64).ravel()
    if g_a.shape != point.shape:
        raise ShapeError(f"gradient shape {g_a.shape} != point shape {point.shape}")
    g_fd = np.empty_like(point)
    for i in range(point.size):
        shifted = point.copy()
        shifted[i] = point[i] + epsilon
        f_plus = float(f(shifted))
        shifted[i] = point[i] - epsilon
        f_minus = float(f(shifted))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ValueError(f"non-finite function value at coordinate {i}")
        g_fd[i] = (f_plus - f_minus) / (2.0 * epsilon)
    denom = np.maximum(np.maximum(np.abs(g_a), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g_a - g_fd) / denom))
