"""Deterministic dense linear algebra on float64 numpy arrays.

Every reduction here accumulates left to right in a fixed order so that
results are reproducible bit for bit across runs. Matrices are plain
2-D ``numpy.ndarray`` objects of dtype float64.
"""

import numpy as np
from scipy.special import erf

from .errors import DegenerateRowError, InvalidCountError, ShapeError, ZeroVectorError

# Additive-mask sentinel. Finite so that mask arithmetic never produces NaN.
NEG_INF = -1e30

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def as_matrix(x, name="matrix"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def matmul(a, b):
    """Matrix product with the inner sum accumulated in ascending index order."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    term = np.empty_like(out)
    for k in range(a.shape[1]):
        np.multiply(a[:, k, None], b[k, None, :], out=term)
        out += term
    return out


def row_sums(x):
    """Left-to-right sum of each row."""
    x = as_matrix(x)
    if x.shape[1] == 0:
        return np.zeros(x.shape[0])
    return np.cumsum(x, axis=1)[:, -1]


def softmax_rows(scores, mask):
    """Row softmax of ``scores + mask``; masked positions come out as exactly 0."""
    scores = as_matrix(scores, "scores")
    mask = as_matrix(mask, "mask")
    if scores.shape != mask.shape:
        raise ShapeError(f"scores {scores.shape} and mask {mask.shape} differ")
    masked = mask == NEG_INF
    dead = np.flatnonzero(masked.all(axis=1))
    if dead.size:
        raise DegenerateRowError(f"rows {dead.tolist()} are fully masked")
    z = scores + mask
    live = np.where(masked, -np.inf, z)
    e = np.exp(live - live.max(axis=1, keepdims=True))
    e[masked] = 0.0
    return e / row_sums(e)[:, None]


def _check_count(values, count):
    if count < 0 or count > len(values):
        raise InvalidCountError(f"count {count} outside [0, {len(values)}]")


def lowest_rank_indices(values, count):
    """Indices of the ``count`` smallest values; ties go to the lower index."""
    values = np.asarray(values, dtype=np.float64)
    _check_count(values, count)
    order = np.argsort(values, kind="stable")
    return np.sort(order[:count])


def top_rank_indices(values, count):
    """Indices of the ``count`` largest values; ties go to the lower index."""
    values = np.asarray(values, dtype=np.float64)
    _check_count(values, count)
    order = np.argsort(-values, kind="stable")
    return np.sort(order[:count])


def cosine_similarity(u, v):
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.sqrt(np.cumsum(u * u)[-1])) if u.size else 0.0
    nv = float(np.sqrt(np.cumsum(v * v)[-1])) if v.size else 0.0
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine similarity of a zero-norm vector")
    dot = float(np.cumsum(u * v)[-1])
    return min(1.0, max(-1.0, dot / (nu * nv)))


def gelu(x):
    """Exact GELU, x * Phi(x), using the error function."""
    x = np.asarray(x, dtype=np.float64)
    return x * 0.5 * (1.0 + erf(x / np.sqrt(2.0)))


def splitmix64(z):
    """SplitMix64 finalizer applied elementwise to a uint64 array."""
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Counter-based generator: draw ``i`` is ``splitmix64(seed + i * golden)``.

    The stream depends only on the seed and the number of draws taken so far,
    so it is identical on every platform.
    """

    def __init__(self, seed):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + idx * _GOLDEN
        return splitmix64(state)

    def uniform(self, n):
        """``n`` doubles in [0, 1) with 53 random bits each."""
        return (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n):
        """``n`` standard normal draws via Box-Muller."""
        pairs = (n + 1) // 2
        u = self.uniform(2 * pairs)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(2.0 * np.pi * u2)
        out[1::2] = r * np.sin(2.0 * np.pi * u2)
        return out[:n]

    def below(self, n):
        """A single integer uniform on [0, n)."""
        return int(self.uniform(1)[0] * n)

    def fork(self, key):
        """Independent child stream keyed by an integer."""
        mixed = splitmix64(np.array([(self.seed ^ (int(key) * 0x632BE59BD9B4E019)) & _MASK64], dtype=np.uint64))
        return Rng(int(mixed[0]))


def gaussian_init(rng, rows, cols, std):
    if std <= 0:
        raise ValueError("std must be positive")
    return (rng.normal(rows * cols) * std).reshape(rows, cols)
