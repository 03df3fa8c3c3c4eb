"""
Effective medium tests for HeatCluster
Volume equation, heat potential W, elliptic coefficient sigma and the
comparison with point-interaction densities.
"""

import logging
import math

import numpy as np
import pytest

from core.effective_medium import (
    ball_mask, c_bar_from_reference, clip_to_maximum_principle, compare_alpha_v, eval_V, eval_W,
    VolumeOperator, neumann_series_v, sample_W, solve_sigma, solve_v, volume_potential, volume_residual,
    voxel_grid_for_partition,
)
from core.foldy_lax import solve_alphas
from core.geometry import build_cluster
from models.cluster import Box
from models.histories import SourceSpec, TimeGrid
from models.voxel_grid import VoxelGrid
from utils.config import get_config
from utils.errors import EffectiveMediumError


UNIT = Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
SOURCE = SourceSpec.point([-1.0, 0.5, 0.5])
OUTSIDE = np.array([1.5, 0.5, 0.5])


@pytest.fixture(scope="module")
def voxels():
    return VoxelGrid.cube(UNIT, 6)


def test_zero_coupling_is_incident_field(voxels):
    grid = TimeGrid(0.5, 10)
    history = solve_v(voxels, 0.0, SOURCE, grid)
    for k, t in enumerate(grid.nodes):
        np.testing.assert_array_equal(history.values[:, k], SOURCE.evaluate(voxels.centers, t))
    assert np.all(history.values[:, 0] == 0.0)


def test_small_coupling_matches_one_picard_iterate(voxels):
    grid = TimeGrid(0.5, 20)
    c_bar = 0.1
    history = solve_v(voxels, c_bar, SOURCE, grid)
    incident = solve_v(voxels, 0.0, SOURCE, grid).values
    picard = incident - c_bar * volume_potential(voxels, grid, incident)
    assert np.abs(history.values - picard).max() <= 0.02 * np.abs(picard).max()


@pytest.mark.parametrize("c_bar", [0.0, 0.5, 2.0])
def test_density_stays_positive(voxels, c_bar):
    history = solve_v(voxels, c_bar, SOURCE, TimeGrid(0.25, 10))
    assert np.all(history.values >= 0.0)
    assert np.all(history.values[:, 1:].max(axis=0) > 0.0)


def test_march_solves_its_discretization(voxels):
    grid = TimeGrid(0.5, 8)
    history = solve_v(voxels, 1.0, SOURCE, grid)
    residual = volume_residual(history, SOURCE)
    assert np.abs(residual).max() <= 1e-12 * np.abs(history.values).max()


def test_volume_operator_respects_cache_budget(voxels, rng):
    grid = TimeGrid(0.5, 6)
    values = rng.random((voxels.n_cells, grid.n_steps + 1))
    cached = VolumeOperator(voxels, grid, budget_mb=1024)
    tight = VolumeOperator(voxels, grid, budget_mb=0)
    assert cached.capacity >= grid.n_steps and cached.rebuilds == 0
    assert tight.capacity == 1

    expected = cached.apply(values)
    actual = tight.apply(values)
    assert tight.rebuilds > 0
    np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-12 * np.abs(expected).max())


def test_march_under_a_tight_cache_budget(voxels, monkeypatch):
    grid = TimeGrid(0.5, 8)
    expected = solve_v(voxels, 1.0, SOURCE, grid).values
    monkeypatch.setattr(get_config().solver, "lag_cache_mb", 0)
    actual = solve_v(voxels, 1.0, SOURCE, grid).values
    np.testing.assert_allclose(actual, expected, rtol=0, atol=1e-12 * np.abs(expected).max())


def test_neumann_series_error_is_third_order(voxels):
    grid = TimeGrid(0.5, 10)
    errors = []
    for c_bar in (0.1, 0.05):
        exact = solve_v(voxels, c_bar, SOURCE, grid).values
        series = neumann_series_v(voxels, c_bar, SOURCE, grid, order=2).values
        errors.append(np.abs(exact - series).max())
    assert errors[0] / errors[1] == pytest.approx(8.0, rel=0.2)


def test_source_inside_domain_rejected(voxels):
    with pytest.raises(EffectiveMediumError, match="source inside effective domain"):
        solve_v(voxels, 1.0, SourceSpec.point([0.5, 0.5, 0.5]), TimeGrid(0.5, 4))
    with pytest.raises(EffectiveMediumError, match="source inside effective domain"):
        solve_v(voxels, 1.0, SourceSpec.point([1.0, 0.5, 0.5]), TimeGrid(0.5, 4))


def test_negative_coupling_rejected(voxels):
    with pytest.raises(EffectiveMediumError, match="c_bar must be nonnegative"):
        solve_v(voxels, -1.0, SOURCE, TimeGrid(0.5, 4))


# ==========================================
# HEAT POTENTIAL
# ==========================================

@pytest.fixture(scope="module")
def coupled(voxels):
    grid = TimeGrid(0.5, 10)
    return solve_v(voxels, 1.0, SOURCE, grid)


def test_W_vanishes_at_time_zero(voxels, coupled):
    assert eval_W(voxels, 1.0, coupled, OUTSIDE, 0.0) == 0.0


def test_W_vanishes_without_coupling(voxels):
    history = solve_v(voxels, 0.0, SOURCE, TimeGrid(0.5, 10))
    assert eval_W(voxels, 0.0, history, OUTSIDE, 0.5) == 0.0
    assert eval_V(voxels, 0.0, SOURCE, history, OUTSIDE, 0.5) == pytest.approx(
        float(SOURCE.evaluate(OUTSIDE, 0.5)[0]))


def test_W_at_cell_centre_is_the_volume_potential(voxels, coupled):
    cell = 100
    potential = volume_potential(voxels, coupled.grid, coupled.values)
    value = eval_W(voxels, 1.0, coupled, voxels.centers[cell], 0.5)
    assert value == pytest.approx(potential[cell, -1], rel=1e-10)


def test_W_interpolates_between_nodes(voxels, coupled):
    center = voxels.centers[100]
    dt = coupled.grid.dt
    lower = eval_W(voxels, 1.0, coupled, center, 4 * dt)
    upper = eval_W(voxels, 1.0, coupled, center, 5 * dt)
    middle = eval_W(voxels, 1.0, coupled, center, 4.5 * dt)
    assert middle == pytest.approx(0.5 * (lower + upper), rel=1e-9)


def test_exterior_W_is_positive_and_below_incident(voxels, coupled):
    W = eval_W(voxels, 1.0, coupled, OUTSIDE, 0.5)
    assert 0 < W < float(SOURCE.evaluate(OUTSIDE, 0.5)[0])
    V = eval_V(voxels, 1.0, SOURCE, coupled, OUTSIDE, 0.5)
    assert V == pytest.approx(float(SOURCE.evaluate(OUTSIDE, 0.5)[0]) - W)


def test_W_errors(voxels, coupled):
    with pytest.raises(EffectiveMediumError, match="beyond simulated horizon"):
        eval_W(voxels, 1.0, coupled, OUTSIDE, 0.6)
    with pytest.raises(EffectiveMediumError, match="evaluation point inside effective domain"):
        eval_W(voxels, 1.0, coupled, [0.5, 0.5, 0.5], 0.5)


def test_W_small_at_first_step():
    voxels = VoxelGrid.cube(UNIT, 4)
    values = []
    for n in (5, 10, 20):
        grid = TimeGrid(0.5, n)
        history = solve_v(voxels, 1.0, SOURCE, grid)
        values.append(abs(eval_W(voxels, 1.0, history, OUTSIDE, grid.dt)))
    assert all(b < a for a, b in zip(values, values[1:]))


def test_sample_W_records(voxels, coupled):
    samples = sample_W(voxels, 1.0, coupled, [OUTSIDE], [0.25, 0.5])
    assert [s.t for s in samples] == [0.25, 0.5]
    assert samples[1].u == eval_W(voxels, 1.0, coupled, OUTSIDE, 0.5)


# ==========================================
# EFFECTIVE CONDUCTIVITY
# ==========================================

def test_sigma_is_one_without_coupling(voxels):
    coefficients = solve_sigma(voxels, 0.0)
    assert np.all(coefficients.sigma_field == 1.0)
    assert np.all(coefficients.gamma_field == 1.0)


def test_sigma_solve_end_to_end(log_records):
    voxels = VoxelGrid.cube(Box.unit(), 8)
    coefficients = solve_sigma(voxels, 4.0)
    sigma = coefficients.sigma_field

    assert coefficients.iterations > 0
    assert coefficients.residual <= 1e-9
    assert 0.0 < sigma.min() < sigma.max() < 1.0
    assert sigma.min() == sigma[3:5, 3:5, 3:5].min()
    np.testing.assert_allclose(sigma, sigma[::-1, :, :], rtol=0, atol=1e-7)
    np.testing.assert_allclose(sigma, np.transpose(sigma, (1, 0, 2)), rtol=0, atol=1e-7)

    convergence = [r.getMessage() for r in log_records if r.getMessage().startswith("Convergence: solve_sigma")]
    assert len(convergence) == 1
    assert f"level_value={coefficients.iterations}" in convergence[0]
    assert not any("clipped" in r.getMessage() for r in log_records)


def test_clip_to_maximum_principle(log_records):
    values = np.array([0.2, 1.0, 1.0 + 5e-11, 1.0 + 1e-6])
    clipped, overshoot = clip_to_maximum_principle(values, 1e-10)
    np.testing.assert_array_equal(clipped, [0.2, 1.0, 1.0, 1.0])
    assert overshoot == pytest.approx(1e-6, rel=1e-6)
    warning = log_records[-1]
    assert warning.levelno == logging.WARNING
    assert "sigma clipped to the maximum principle" in warning.getMessage()
    assert "cells=1" in warning.getMessage()


def test_clip_within_tolerance_is_silent(log_records):
    clipped, overshoot = clip_to_maximum_principle(np.array([0.5, 1.0 + 5e-11]), 1e-10)
    assert clipped.max() == 1.0
    assert 0.0 < overshoot <= 1e-10
    assert not log_records


def test_sigma_bounds_and_monotonicity():
    voxels = VoxelGrid.cube(UNIT, 10)
    fields = [solve_sigma(voxels, c_bar).sigma_field for c_bar in (1.0, 4.0, 16.0)]
    for sigma in fields:
        assert np.all(sigma > 0) and np.all(sigma <= 1.0)
    for weaker, stronger in zip(fields, fields[1:]):
        assert np.all(stronger <= weaker + 1e-9)
    coefficients = solve_sigma(voxels, 4.0)
    np.testing.assert_array_equal(coefficients.gamma_field, np.square(coefficients.sigma_field))
    np.testing.assert_array_equal(coefficients.rho_c_field, coefficients.gamma_field)


def test_sigma_extends_by_one_outside_mask():
    omega = Box((-1.0, -1.0, -1.0), (1.0, 1.0, 1.0))
    mask = ball_mask(omega, (12, 12, 12), 1.0)
    coefficients = solve_sigma(VoxelGrid(omega, (12, 12, 12), mask), 4.0)
    assert np.all(coefficients.sigma_field[~mask] == 1.0)
    assert coefficients.sigma_field[mask].max() < 1.0


@pytest.mark.slow
def test_sigma_on_ball_matches_radial_solution():
    R, c_bar, n = 1.0, 4.0, 64
    omega = Box((-R, -R, -R), (R, R, R))
    mask = ball_mask(omega, (n, n, n), R)
    voxels = VoxelGrid(omega, (n, n, n), mask)
    sigma = solve_sigma(voxels, c_bar).sigma_field.ravel()

    r = np.linalg.norm(voxels.centers, axis=1)
    root = math.sqrt(c_bar)
    exact = (R / r) * np.sinh(root * r) / math.sinh(root * R)
    inner = r <= 0.9 * R
    np.testing.assert_allclose(sigma[inner], exact[inner], rtol=2e-2)


# ==========================================
# CROSS-MODEL COMPARISON
# ==========================================

def test_compare_alpha_v_on_a_lattice():
    cluster, partition = build_cluster(UNIT, 1 / 8, 2.0)
    grid = TimeGrid(0.5, 20)
    source = SourceSpec.point([-0.5, 0.5, 0.5])
    caps = [4 * math.pi * cluster.eps] * cluster.M
    c_bar = c_bar_from_reference(4 * math.pi, 2.0)

    history = solve_alphas(cluster, caps, source, grid)
    v_history = solve_v(voxel_grid_for_partition(partition), c_bar, source, grid)
    value = compare_alpha_v(history, v_history, partition)
    assert math.isfinite(value) and value >= 0


def test_compare_alpha_v_shrinks_with_a():
    """Per-centre mean square difference falls as the lattice refines"""
    source = SourceSpec.point([-1.5, 0.5, 0.5])
    grid = TimeGrid(1.0, 40)
    c_bar = c_bar_from_reference(4 * math.pi, 2.0)
    means = []
    for a in (1 / 27, 1 / 64):
        cluster, partition = build_cluster(UNIT, a, 2.0)
        history = solve_alphas(cluster, [4 * math.pi * cluster.eps] * cluster.M, source, grid)
        v_history = solve_v(voxel_grid_for_partition(partition, 3), c_bar, source, grid)
        means.append(compare_alpha_v(history, v_history, partition) / cluster.M)
    assert 0 < means[1] < means[0]


def test_compare_alpha_v_weak_single_cavity():
    cluster, partition = build_cluster(UNIT, 1.0, 2.0)
    assert cluster.M == 1
    grid = TimeGrid(0.5, 40)
    source = SourceSpec.point([-0.5, 0.5, 0.5])
    history = solve_alphas(cluster, [1e-4], source, grid)
    v_history = solve_v(voxel_grid_for_partition(partition, 3), 1e-4, source, grid)
    assert math.sqrt(compare_alpha_v(history, v_history, partition)) <= 1e-2


def test_compare_alpha_v_rejects_mismatched_grids():
    cluster, partition = build_cluster(UNIT, 1 / 8, 2.0)
    source = SourceSpec.point([-0.5, 0.5, 0.5])
    history = solve_alphas(cluster, [0.1] * cluster.M, source, TimeGrid(0.5, 10))
    v_history = solve_v(voxel_grid_for_partition(partition), 1.0, source, TimeGrid(0.5, 20))
    with pytest.raises(EffectiveMediumError, match="incompatible discretizations"):
        compare_alpha_v(history, v_history, partition)


def test_partition_grid_needs_odd_refinement():
    _, partition = build_cluster(UNIT, 1 / 8, 2.0)
    with pytest.raises(EffectiveMediumError, match="refinement must be a positive odd integer"):
        voxel_grid_for_partition(partition, 2)
    grid = voxel_grid_for_partition(partition, 3)
    assert grid.shape == (6, 6, 6)
    assert np.all(grid.index_of(partition.centers) >= 0)
