"""
Space-time boundary oracle tests for HeatCluster
Small meshes and few steps; the oracle is dense in space and time.
"""

import math

import numpy as np
import pytest
from scipy import integrate

from core.foldy_lax import solve_alphas
from core.geometry import cavity_meshes, cluster_from_centers, triangulate
from core.heat_bem_reference import (
    charge_history, compare_charges, eval_reference_field, harmonic_density, point_charge_field,
    single_layer_heat_potential, solve_boundary_density, static_capacitance,
)
from models.cluster import ReferenceShape
from models.histories import SourceSpec, SpaceTimeDensity, TimeGrid
from utils.errors import ReferenceSolverError


Z_STAR = [0.0, 0.0, -1.0]


@pytest.fixture(scope="module")
def reference_mesh():
    return triangulate(ReferenceShape.unit_sphere(), 1)


@pytest.fixture(scope="module")
def single(reference_mesh):
    cluster = cluster_from_centers([[0.0, 0.0, 0.0]], 0.05)
    grid = TimeGrid(1.0, 20)
    density = solve_boundary_density(cluster, cavity_meshes(cluster, reference_mesh),
                                     SourceSpec.point(Z_STAR), grid)
    return cluster, density


def test_zero_source_gives_zero_density(reference_mesh):
    cluster = cluster_from_centers([[0, 0, 0], [0.5, 0, 0]], 0.1)
    source = SourceSpec.smooth(lambda points, t: np.zeros(len(points)))
    density = solve_boundary_density(cluster, cavity_meshes(cluster, reference_mesh), source, TimeGrid(0.5, 5))
    assert density.values.shape == (2 * reference_mesh.n_panels, 6)
    assert np.all(density.values == 0.0)


def test_field_vanishes_at_time_zero(single):
    _, density = single
    assert eval_reference_field(density, [1.0, 0.0, 0.0], 0.0) == 0.0


def test_first_column_is_zero(single):
    _, density = single
    assert np.all(density.values[:, 0] == 0.0)


def test_far_field_matches_point_charge(single, reference_mesh):
    """One small sphere radiates like a point charge of strength C_eps * f(z)"""
    cluster, density = single
    grid = density.grid
    target = np.array([2.0, 0.0, 0.0])
    source = SourceSpec.point(Z_STAR)

    trace = np.stack([source.evaluate(cluster.centers, t) for t in grid.nodes], axis=1)
    charges = cluster.eps * static_capacitance(reference_mesh) * trace
    expected = point_charge_field(cluster.centers, charges, grid, target, grid.T)
    actual = eval_reference_field(density, target, grid.T)
    assert expected > 0
    assert actual == pytest.approx(expected, rel=0.25)


def test_charges_track_point_interaction_density(single, reference_mesh):
    cluster, density = single
    cap = cluster.eps * static_capacitance(reference_mesh)
    history = solve_alphas(cluster, [cap], SourceSpec.point(Z_STAR), density.grid)
    distance = compare_charges(density, [cap], history)
    scale = np.sqrt(integrate.trapezoid(np.square(history.alphas[0]), density.grid.nodes))
    assert distance.shape == (1,)
    assert distance[0] < 0.1 * scale


def test_charge_deviation_shrinks_with_eps(reference_mesh):
    grid = TimeGrid(1.0, 20)
    source = SourceSpec.point(Z_STAR)
    relative = []
    for eps in (0.2, 0.1, 0.05):
        cluster = cluster_from_centers([[0.0, 0.0, 0.0]], eps)
        density = solve_boundary_density(cluster, cavity_meshes(cluster, reference_mesh), source, grid)
        cap = eps * static_capacitance(reference_mesh)
        history = solve_alphas(cluster, [cap], source, grid)
        scale = np.sqrt(integrate.trapezoid(np.square(history.alphas[0]), grid.nodes))
        relative.append(compare_charges(density, [cap], history)[0] / scale)
    assert relative[0] > relative[1] > relative[2]
    assert relative[2] < 0.5 * relative[0]


def test_charge_history_shape(single):
    _, density = single
    charges = charge_history(density)
    assert charges.shape == (1, density.grid.n_steps + 1)
    assert charges[0, 0] == 0.0


def test_harmonic_density_tends_to_surface_density(single):
    _, density = single
    panel = 0
    t = density.grid.T
    sigma = density.values[panel, -1]
    errors = [abs(float(harmonic_density(density, panel, r, t)[0]) - sigma) for r in (1e-2, 1e-3)]
    assert errors[1] < errors[0] / 5
    assert abs(float(harmonic_density(density, panel, 1e-7, t)[0]) - sigma) <= 1e-4 * np.abs(density.values).max()


def test_static_capacitance_near_sphere_value(reference_mesh):
    value = static_capacitance(reference_mesh)
    assert value == pytest.approx(4 * math.pi, rel=0.1)
    assert static_capacitance(reference_mesh.scaled(0.1)) == pytest.approx(0.1 * value, rel=1e-10)


def test_point_charge_field_at_time_zero():
    grid = TimeGrid(1.0, 4)
    assert point_charge_field(np.zeros((1, 3)), np.ones((1, 5)), grid, [1, 0, 0], 0.0) == 0.0


def test_reference_field_errors(single):
    _, density = single
    with pytest.raises(ReferenceSolverError, match="evaluation point inside cavity"):
        eval_reference_field(density, [0.0, 0.0, 0.0], 0.5)
    with pytest.raises(ReferenceSolverError, match="beyond simulated horizon"):
        eval_reference_field(density, [1.0, 0.0, 0.0], 2.0)


def test_oracle_scale_limits(reference_mesh):
    cluster = cluster_from_centers([[0, 0, 0]], 0.1)
    with pytest.raises(ReferenceSolverError, match="problem exceeds oracle scale"):
        solve_boundary_density(cluster, cavity_meshes(cluster, reference_mesh),
                               SourceSpec.point(Z_STAR), TimeGrid(1.0, 100000))
    with pytest.raises(ReferenceSolverError, match="one mesh per cavity required"):
        solve_boundary_density(cluster, [], SourceSpec.point(Z_STAR), TimeGrid(1.0, 5))


def test_incompatible_discretizations(single, reference_mesh):
    cluster, density = single
    history = solve_alphas(cluster, [1.0], SourceSpec.point(Z_STAR), TimeGrid(1.0, 10))
    with pytest.raises(ReferenceSolverError, match="incompatible discretizations"):
        compare_charges(density, [1.0], history)


def test_single_layer_scaling_identity(reference_mesh):
    """S on eps B + z at (eps xi + z, t) equals eps times S on B at (xi, t / eps^2)"""
    eps, z = 0.5, np.array([0.3, -0.2, 0.1])
    grid = TimeGrid(0.5, 6)
    values = np.random.default_rng(11).uniform(0.0, 1.0, (reference_mesh.n_panels, grid.n_steps + 1))
    xi = np.array([1.6, 0.4, -0.3])

    small = single_layer_heat_potential([reference_mesh.placed(eps, z)], grid, values, eps * xi + z, grid.T)
    stretched = TimeGrid(grid.T / eps ** 2, grid.n_steps)
    unit = single_layer_heat_potential([reference_mesh], stretched, values, xi, stretched.T)
    assert small > 0
    assert small == pytest.approx(eps * unit, rel=1e-9)


def test_field_reproduces_boundary_data(single):
    """At collocation points only the near-panel rule differs from the march"""
    _, density = single
    mesh = density.meshes[0]
    source = SourceSpec.point(Z_STAR)
    t = density.grid.T
    for p in (0, 17, 41, 66):
        x = mesh.centroids[p]
        value = single_layer_heat_potential(density.meshes, density.grid, density.values, x, t)
        assert value == pytest.approx(float(source.evaluate(x, t)[0]), rel=0.05)


def test_field_nonnegative_for_point_source(single):
    _, density = single
    directions = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]], dtype=float)
    for distance in (0.2, 0.5, 1.0, 2.0):
        for direction in directions:
            for t in (0.25, 0.5, 1.0):
                assert eval_reference_field(density, distance * direction, t) >= -1e-10


def test_dilation_scales_space_time_norms(reference_mesh):
    """On eps B + z with time stretched by eps^2 the density norm scales by eps^2, the potential by eps^3"""
    eps, z = 0.25, np.array([0.3, -0.2, 0.1])
    grid = TimeGrid(0.5, 5)
    stretched = TimeGrid(grid.T / eps ** 2, grid.n_steps)
    values = np.random.default_rng(7).uniform(0.0, 1.0, (reference_mesh.n_panels, grid.n_steps + 1))
    values[:, 0] = 0.0
    small = SpaceTimeDensity([reference_mesh.placed(eps, z)], grid, values)
    unit = SpaceTimeDensity([reference_mesh], stretched, values)
    assert small.l2_norm() == pytest.approx(eps ** 2 * unit.l2_norm(), rel=1e-12)

    def potential_norm(density):
        mesh = density.meshes[0]
        traces = np.array([
            [single_layer_heat_potential(density.meshes, density.grid, density.values, x, t)
             for t in density.grid.nodes[1:]]
            for x in mesh.centroids
        ])
        return math.sqrt(density.grid.dt * np.sum(mesh.areas[:, None] * np.square(traces)))

    assert potential_norm(small) == pytest.approx(eps ** 3 * potential_norm(unit), rel=1e-8)


@pytest.mark.slow
def test_field_reproduces_boundary_data_between_collocation_points():
    mesh = triangulate(ReferenceShape.unit_sphere(), 3)
    cluster = cluster_from_centers([[0.0, 0.0, 0.0]], 0.05)
    source = SourceSpec.point(Z_STAR)
    density = solve_boundary_density(cluster, cavity_meshes(cluster, mesh), source, TimeGrid(1.0, 20))
    corners = density.meshes[0].corners
    for p in (0, 311, 702, 1111):
        for vertex in range(3):
            barycentric = np.full(3, 1.0 / 6.0)
            barycentric[vertex] = 2.0 / 3.0
            x = barycentric @ corners[p]
            for t in (0.5, 1.0):
                value = single_layer_heat_potential(density.meshes, density.grid, density.values, x, t)
                assert value == pytest.approx(float(source.evaluate(x, t)[0]), rel=0.02)
