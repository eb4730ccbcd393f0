"""Evenly-distributed class centroids on the unit hypersphere.

Points are treated as mutually repelling charges confined to the sphere. Each
iteration moves every point along the tangential part of its net repulsive
force and projects it back onto the sphere. A step that would raise the
energy is halved until it does not, so the recorded energy sequence never
increases.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import kernels
from .errors import CoincidentPointsError, ConfigError
from .numeric import Rng, as_matrix, gaussian_matrix, l2_normalize_rows, pairwise_cosines, row_norms

UNIT_NORM_TOL = 1e-9
COINCIDENT_DIST = 1e-12
INIT_MIN_DIST = 1e-6
# backtracking gives up once the trial step has shrunk by this factor
MIN_STEP_FRACTION = 2.0**-60


class NoConvergenceWarning(UserWarning):
    """Generation hit ``max_iterations``; the best configuration so far is returned."""


@dataclass(frozen=True)
class GenConfig:
    max_iterations: int = 20_000
    step_size: float = 0.05
    step_decay: float = 1.0
    force_exponent: float = 1.0
    convergence_tol: float = 1e-7
    step_growth: float = 1.5
    max_step_factor: float = 1e3

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("step_size must be positive")
        if not 0 < self.step_decay <= 1:
            raise ConfigError("step_decay must lie in (0, 1]")
        if not self.force_exponent > 0:
            raise ConfigError("force_exponent must be positive")
        if not 0 < self.convergence_tol < self.step_size:
            raise ConfigError("convergence_tol must be positive and below step_size")
        if self.step_growth < 1:
            raise ConfigError("step_growth must be >= 1")
        if self.max_step_factor < 1:
            raise ConfigError("max_step_factor must be >= 1")


@dataclass(frozen=True, eq=False)
class CentroidSet:
    """``c x d`` matrix of unit rows plus how it was produced."""

    centers: np.ndarray
    seed: int = 0
    force_exponent: float = 1.0
    final_energy: float = float("nan")
    iterations_run: int = 0
    stop_reason: str = "unknown"
    extra: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        centers = as_matrix(self.centers, "centers").copy()
        centers.flags.writeable = False
        object.__setattr__(self, "centers", centers)
        c, d = centers.shape
        if c < 2 or d < 2:
            raise ConfigError(f"need at least 2 classes and 2 dimensions, got c={c}, d={d}")
        dev = np.abs(row_norms(centers) - 1.0)
        if dev.max() > UNIT_NORM_TOL:
            raise ConfigError(f"row {int(dev.argmax())} is not unit norm (|norm-1|={dev.max():.3g})")
        if not self.min_pairwise_angle_deg > 0:
            raise ConfigError("centroid rows must be pairwise distinct")

    @property
    def num_classes(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def converged(self) -> bool:
        return self.stop_reason != "max_iterations"

    @cached_property
    def min_pairwise_angle_deg(self) -> float:
        cos = pairwise_cosines(self.centers)
        np.fill_diagonal(cos, -np.inf)
        return math.degrees(math.acos(min(1.0, max(-1.0, float(cos.max())))))

    def with_centers(self, centers) -> "CentroidSet":
        return CentroidSet(
            centers, self.seed, self.force_exponent, self.final_energy,
            self.iterations_run, self.stop_reason, dict(self.extra),
        )

    def __eq__(self, other):
        if not isinstance(other, CentroidSet):
            return NotImplemented
        return (
            np.array_equal(self.centers, other.centers)
            and self.seed == other.seed
            and _same_float(self.force_exponent, other.force_exponent)
            and _same_float(self.final_energy, other.final_energy)
            and self.iterations_run == other.iterations_run
            and self.stop_reason == other.stop_reason
        )

    __hash__ = None


def _same_float(a, b):
    return a == b or (math.isnan(a) and math.isnan(b))


def energy(points, k: float = 1.0) -> float:
    """Riesz ``k``-energy ``sum_{i<j} |p_i - p_j| ** -k``."""
    points = as_matrix(points, "points")
    value, min_r2 = kernels.energy(points, float(k))
    if min_r2 < COINCIDENT_DIST**2:
        raise CoincidentPointsError(f"points closer than {COINCIDENT_DIST}")
    return float(value)


def _tangential_force(points, k):
    f, min_r2 = kernels.forces(points, k)
    if min_r2 < COINCIDENT_DIST**2:
        raise CoincidentPointsError(f"points closer than {COINCIDENT_DIST}")
    radial = np.einsum("ij,ij->i", f, points)
    return f - radial[:, None] * points


def _move(points, force, step):
    return l2_normalize_rows(points + step * force)


def repulsion_step(points, cfg: GenConfig | None = None, step: float | None = None) -> np.ndarray:
    """One unguarded move of every point along its tangential repulsive force.

    ``step`` overrides ``cfg.step_size``; it may be zero.
    """
    cfg = cfg or GenConfig()
    points = as_matrix(points, "points")
    step = cfg.step_size if step is None else float(step)
    return _move(points, _tangential_force(points, cfg.force_exponent), step)


def initial_points(rng: Rng, c: int, d: int) -> np.ndarray:
    """Gaussian rows projected to the sphere, redrawing near-coincident rows."""
    points = l2_normalize_rows(gaussian_matrix(rng, c, d))
    while True:
        r2 = kernels._squared_distances(points)
        r2[np.tril_indices(c)] = np.inf
        close = np.flatnonzero((r2 < INIT_MIN_DIST**2).any(axis=0))
        if close.size == 0:
            return points
        points[close] = l2_normalize_rows(gaussian_matrix(rng, close.size, d))


def generate(c: int, d: int, seed: int = 0, cfg: GenConfig | None = None, callback=None) -> CentroidSet:
    """Spread ``c`` unit vectors in ``d`` dimensions by simulated charge repulsion.

    ``callback(iteration, points, energy, step)`` is invoked after every accepted
    move. Hitting ``max_iterations`` emits :class:`NoConvergenceWarning` and
    still returns the last (lowest-energy) configuration.
    """
    if c < 2:
        raise ConfigError(f"number of classes must satisfy c >= 2, got {c}")
    if d < 2:
        raise ConfigError(f"dimension must satisfy d >= 2, got {d}")
    cfg = cfg or GenConfig()
    k = float(cfg.force_exponent)

    points = initial_points(Rng(seed), c, d)
    e = energy(points, k)
    base = cfg.step_size
    step = base
    cap = base * cfg.max_step_factor
    stop = "max_iterations"
    it = 0
    while it < cfg.max_iterations:
        ft = _tangential_force(points, k)
        trial = step
        while True:
            candidate = _move(points, ft, trial)
            e_new, min_r2 = kernels.energy(candidate, k)
            if min_r2 >= COINCIDENT_DIST**2 and e_new <= e:
                break
            trial *= 0.5
            if trial < base * MIN_STEP_FRACTION:
                candidate = None
                break
        if candidate is None:
            stop = "stalled"
            break
        displacement = float(row_norms(candidate - points).max())
        points, e = candidate, float(e_new)
        it += 1
        if callback is not None:
            callback(it, points, e, trial)
        if displacement < cfg.convergence_tol:
            stop = "converged"
            break
        base *= cfg.step_decay
        cap *= cfg.step_decay
        step = min(trial * cfg.step_growth, cap)

    if stop == "max_iterations":
        warnings.warn(
            f"centroid generation stopped after {it} iterations without meeting "
            f"convergence_tol={cfg.convergence_tol}",
            NoConvergenceWarning,
            stacklevel=2,
        )
    return CentroidSet(points, seed=int(seed), force_exponent=k, final_energy=e,
                       iterations_run=it, stop_reason=stop)


def simplex_cosine(c: int) -> float:
    """Pairwise cosine of the regular simplex with ``c`` vertices."""
    return -1.0 / (c - 1)


def inspect(cs: CentroidSet) -> dict:
    """Angle spectrum, energy and row norms of a centroid set."""
    cos = pairwise_cosines(cs.centers)
    iu = np.triu_indices(cs.num_classes, 1)
    angles = np.degrees(np.arccos(np.clip(cos[iu], -1.0, 1.0)))
    norms = row_norms(cs.centers)
    return {
        "num_classes": cs.num_classes,
        "dim": cs.dim,
        "min_angle_deg": float(angles.min()),
        "mean_angle_deg": float(angles.mean()),
        "max_angle_deg": float(angles.max()),
        "max_cosine": float(cos[iu].max()),
        "energy": energy(cs.centers, cs.force_exponent),
        "iterations": cs.iterations_run,
        "stop_reason": cs.stop_reason,
        "row_norm_min": float(norms.min()),
        "row_norm_max": float(norms.max()),
        "row_norms": norms.tolist(),
    }
