import math
import warnings

import numpy as np
import pytest

from pedcc.centroids import (
    CentroidSet, GenConfig, NoConvergenceWarning, energy, generate, initial_points, inspect,
    repulsion_step, simplex_cosine,
)
from pedcc.errors import CoincidentPointsError, ConfigError
from pedcc.numeric import Rng, pairwise_cosines


def off_diagonal(g):
    return g[np.triu_indices(g.shape[0], 1)]


def regular_simplex(c):
    """Centered, normalised standard basis of R^c: an exact regular simplex in c dims."""
    e = np.eye(c) - 1.0 / c
    return e / np.linalg.norm(e, axis=1, keepdims=True)


def test_two_points_antipodal():
    cs = generate(2, 5, seed=3)
    assert off_diagonal(pairwise_cosines(cs.centers))[0] == pytest.approx(-1.0, abs=1e-6)


@pytest.mark.parametrize("c, d", [(3, 2), (4, 3), (5, 16), (9, 8), (11, 10)])
def test_simplex_configurations(c, d):
    cs = generate(c, d, seed=11)
    cos = off_diagonal(pairwise_cosines(cs.centers))
    np.testing.assert_allclose(cos, simplex_cosine(c), atol=5e-3)
    assert cs.stop_reason == "converged"


def test_planar_triangle_matches_brute_force():
    # brute force over the angle of the second and third point with the first fixed
    grid = np.linspace(0, 2 * np.pi, 721)
    a, b = np.meshgrid(grid, grid)
    def dist(t):
        return np.abs(2 * np.sin(t / 2))
    with np.errstate(divide="ignore"):
        e = 1 / dist(a) + 1 / dist(b) + 1 / dist(a - b)
    i = np.unravel_index(np.nanargmin(np.where(np.isfinite(e), e, np.inf)), e.shape)
    best = sorted([grid[i[1]], grid[i[0]]])
    assert best[0] == pytest.approx(2 * np.pi / 3, abs=0.01)
    assert best[1] == pytest.approx(4 * np.pi / 3, abs=0.01)
    cs = generate(3, 2, seed=0)
    np.testing.assert_allclose(off_diagonal(pairwise_cosines(cs.centers)), math.cos(best[0]), atol=5e-3)


def test_twenty_points_in_3d():
    cs = generate(20, 3, seed=0)
    info = inspect(cs)
    assert info["min_angle_deg"] > 40.0
    np.testing.assert_allclose(cs.centers @ cs.centers.T, pairwise_cosines(cs.centers), atol=1e-12)


def test_energy_examples():
    assert energy(np.array([[1.0, 0.0], [-1.0, 0.0]]), 1.0) == pytest.approx(0.5)
    assert energy(np.array([[1.0, 0.0], [0.0, 1.0]]), 2.0) == pytest.approx(0.5)


def test_energy_permutation_invariant():
    pts = generate(6, 4, seed=2).centers
    perm = np.array([3, 0, 5, 1, 4, 2])
    assert energy(pts[perm]) == pytest.approx(energy(pts), rel=1e-14)


def test_energy_coincident():
    with pytest.raises(CoincidentPointsError):
        energy(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_energy_not_above_initial():
    cs = generate(7, 3, seed=5)
    start = initial_points(Rng(5), 7, 3)
    assert cs.final_energy <= energy(start)


def test_repulsion_step_fixed_point():
    pts = regular_simplex(4)
    out = repulsion_step(pts)
    assert np.abs(out - pts).max() < GenConfig().convergence_tol


def test_repulsion_step_pushes_apart():
    pts = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    out = repulsion_step(pts, step=0.05)
    assert out[0] @ out[1] < 0.0  # angle now above 90 degrees
    np.testing.assert_allclose(np.linalg.norm(out, axis=1), 1.0, atol=1e-12)


def test_repulsion_step_zero_step_is_identity():
    pts = generate(5, 4, seed=1).centers
    np.testing.assert_allclose(repulsion_step(pts, step=0.0), pts, atol=1e-15)


def test_inspect_tetrahedron_and_pair():
    tet = inspect(generate(4, 3, seed=7))
    assert tet["min_angle_deg"] == pytest.approx(math.degrees(math.acos(-1 / 3)), abs=0.3)
    pair = inspect(generate(2, 3, seed=7))
    assert pair["min_angle_deg"] == pytest.approx(180.0, abs=0.01)
    assert max(abs(n - 1) for n in tet["row_norms"]) < 1e-9


def test_min_angle_field_matches_recomputation():
    cs = generate(8, 5, seed=4)
    g = pairwise_cosines(cs.centers)
    np.fill_diagonal(g, -1)
    assert cs.min_pairwise_angle_deg == pytest.approx(math.degrees(math.acos(g.max())), abs=1e-12)


def test_callback_sees_monotone_energy_and_unit_rows():
    energies, errs = [], []
    def cb(it, pts, e, step):
        energies.append(e)
        errs.append(np.abs(np.linalg.norm(pts, axis=1) - 1).max())
    cs = generate(12, 4, seed=8, callback=cb)
    assert len(energies) == cs.iterations_run
    assert np.all(np.diff(energies) <= 0)
    assert max(errs) <= 1e-12


def test_seed_determinism():
    a = generate(10, 6, seed=99)
    b = generate(10, 6, seed=99)
    assert np.array_equal(a.centers, b.centers) and a == b


def test_max_iterations_warns_and_returns_best():
    cfg = GenConfig(max_iterations=3)
    with pytest.warns(NoConvergenceWarning):
        cs = generate(6, 3, seed=1, cfg=cfg)
    assert cs.iterations_run == 3 and cs.stop_reason == "max_iterations"
    assert not cs.converged


def test_force_exponent_two_still_reaches_simplex():
    cs = generate(4, 3, seed=2, cfg=GenConfig(force_exponent=2.0))
    np.testing.assert_allclose(off_diagonal(pairwise_cosines(cs.centers)), -1 / 3, atol=5e-3)


@pytest.mark.parametrize("c, d", [(1, 3), (3, 1)])
def test_generate_rejects_small(c, d):
    with pytest.raises(ConfigError):
        generate(c, d)


def test_config_validation():
    with pytest.raises(ConfigError):
        GenConfig(step_size=1e-8, convergence_tol=1e-7)
    with pytest.raises(ConfigError):
        GenConfig(step_decay=1.5)


def test_centroid_set_rejects_non_unit_rows():
    with pytest.raises(ConfigError):
        CentroidSet(np.array([[1.0, 0.0], [0.0, 2.0]]))


def test_centroid_set_rejects_duplicates():
    with pytest.raises(ConfigError):
        CentroidSet(np.array([[1.0, 0.0], [1.0, 0.0]]))


def test_no_convergence_is_not_an_error():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        cs = generate(30, 3, seed=0, cfg=GenConfig(max_iterations=10))
    assert np.all(np.abs(np.linalg.norm(cs.centers, axis=1) - 1) < 1e-9)
