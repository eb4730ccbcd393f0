"""Pairwise Riesz-energy kernels used by centroid generation.

For unit vectors ``p_1..p_c`` and exponent ``k > 0`` the energy is
``sum_{i<j} |p_i - p_j| ** -k``.  The repulsive force on ``p_i`` is the
negative energy gradient, ``k * sum_j (p_i - p_j) / |p_i - p_j| ** (k + 2)``.

Both versions share the O(c^2 d) Gram product (BLAS); the numba version
replaces the O(c^2) elementwise passes and temporaries with fixed-order loops. ``energy`` and ``forces`` dispatch to one of
them according to :mod:`pedcc._accel`. Both return the minimum squared
pairwise distance so callers can detect coincident points without a second
pass.
"""

import numpy as np

from ._accel import USE_NUMBA, njit


@njit
def _gram_r2_numba(points):
    c = points.shape[0]
    g = np.dot(points, points.T)
    r2 = np.empty((c, c))
    for i in range(c):
        for j in range(c):
            v = g[i, i] + g[j, j] - 2.0 * g[i, j]
            r2[i, j] = v if v > 0.0 else 0.0
    return r2


@njit
def energy_numba(points, k):
    c = points.shape[0]
    r2 = _gram_r2_numba(points)
    total = 0.0
    min_r2 = np.inf
    for i in range(c):
        for j in range(i + 1, c):
            v = r2[i, j]
            if v < min_r2:
                min_r2 = v
            if v <= 0.0:
                total = np.inf
            else:
                total += v ** (-0.5 * k)
    return total, min_r2


@njit
def forces_numba(points, k):
    c = points.shape[0]
    r2 = _gram_r2_numba(points)
    coef = np.zeros((c, c))
    rowsum = np.zeros(c)
    min_r2 = np.inf
    for i in range(c):
        for j in range(i + 1, c):
            v = r2[i, j]
            if v < min_r2:
                min_r2 = v
            if v <= 0.0:
                continue
            w = k * v ** (-0.5 * k - 1.0)
            coef[i, j] = w
            coef[j, i] = w
            rowsum[i] += w
            rowsum[j] += w
    out = rowsum.reshape(c, 1) * points - np.dot(coef, points)
    return out, min_r2


def _squared_distances(points):
    sq = np.einsum("ij,ij->i", points, points)
    r2 = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
    np.maximum(r2, 0.0, out=r2)
    return r2


def energy_numpy(points, k):
    c = points.shape[0]
    iu = np.triu_indices(c, 1)
    r2 = _squared_distances(points)[iu]
    min_r2 = r2.min() if r2.size else np.inf
    if min_r2 <= 0.0:
        return np.inf, min_r2
    return float(np.sum(r2 ** (-0.5 * k))), float(min_r2)


def forces_numpy(points, k):
    c = points.shape[0]
    r2 = _squared_distances(points)
    np.fill_diagonal(r2, np.inf)
    min_r2 = float(r2.min()) if c > 1 else np.inf
    if min_r2 <= 0.0:
        return np.zeros_like(points), min_r2
    coef = k * r2 ** (-0.5 * k - 1.0)
    return coef.sum(axis=1)[:, None] * points - coef @ points, min_r2


if USE_NUMBA:
    energy, forces = energy_numba, forces_numba
    BACKEND = "numba"
else:
    energy, forces = energy_numpy, forces_numpy
    BACKEND = "numpy"
