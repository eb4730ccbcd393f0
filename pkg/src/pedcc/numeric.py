"""Deterministic random numbers and small row-wise linear algebra helpers.

Matrices throughout the package are plain 2-D ``float64`` numpy arrays.

The generator is SplitMix64 (Steele, Lea & Flood 2014) used in counter mode:
draw ``i`` of a stream with seed ``s`` is ``mix64(s + (i + 1) * GAMMA)`` where
``GAMMA = 0x9E3779B97F4A7C15`` and ``mix64`` is the standard finaliser::

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

(all arithmetic modulo 2**64).  Uniforms on (0, 1] are ``((z >> 11) + 1) / 2**53``.
Normal deviates come from the Box-Muller transform applied to consecutive
uniform pairs ``(u1, u2)``: ``sqrt(-2 ln u1) * cos(2 pi u2)`` then
``sqrt(-2 ln u1) * sin(2 pi u2)``.  Any language with 64-bit unsigned integers
can reproduce the integer stream exactly.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, ZeroRowError

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1

ZERO_ROW_TOL = 1e-30


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream. Not thread-safe; give each thread its own instance."""

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self.counter = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def next_u64(self, size: int) -> np.ndarray:
        if size < 0:
            raise ValueError("size must be non-negative")
        idx = np.arange(self.counter + 1, self.counter + size + 1, dtype=np.uint64)
        self.counter += size
        with np.errstate(over="ignore"):
            return _mix64(np.uint64(self.seed) + idx * GAMMA)

    def uniform(self, size: int) -> np.ndarray:
        """Uniform doubles on (0, 1]."""
        bits = self.next_u64(size) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)

    def normal(self, size: int) -> np.ndarray:
        pairs = (size + 1) // 2
        u = self.uniform(2 * pairs)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        out = np.empty(2 * pairs)
        out[0::2] = r * np.cos(theta)
        out[1::2] = r * np.sin(theta)
        return out[:size]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_u64(n)
        return np.argsort(keys, kind="stable")

    def split(self) -> "Rng":
        """Independent child stream seeded from the next draw of this one."""
        return Rng(int(self.next_u64(1)[0]))


def gaussian_matrix(rng: Rng, rows: int, cols: int) -> np.ndarray:
    """``rows x cols`` matrix of i.i.d. standard normals, filled row-major."""
    if rows < 1 or cols < 1:
        raise ValueError(f"rows and cols must be >= 1, got {rows}x{cols}")
    return rng.normal(rows * cols).reshape(rows, cols)


def as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def row_norms(m: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->i", m, m))


def l2_normalize_rows(m) -> np.ndarray:
    m = as_matrix(m)
    norms = row_norms(m)
    bad = np.flatnonzero(norms < ZERO_ROW_TOL)
    if bad.size:
        raise ZeroRowError(f"row {int(bad[0])} has zero norm")
    return m / norms[:, None]


def pairwise_cosines(m) -> np.ndarray:
    u = l2_normalize_rows(m)
    g = u @ u.T
    # exact symmetry regardless of BLAS summation order
    g = np.triu(g, 1)
    g = g + g.T
    np.fill_diagonal(g, 1.0)
    return g
