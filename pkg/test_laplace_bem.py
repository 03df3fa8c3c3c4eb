"""
Capacitance solver tests for HeatCluster
"""

import math

import numpy as np
import pytest
from scipy import integrate
from scipy.spatial.transform import Rotation

from core.geometry import triangulate
from core.laplace_bem import (
    Capacitance, assemble_single_layer, capacitance, single_layer_potential, triangle_potential,
)
from models.cluster import ReferenceShape
from models.mesh import TriMesh
from utils.errors import CapacitanceError, GeometryError


SIDE = 0.2


def equilateral(side=SIDE, offset=(0.0, 0.0, 0.0)):
    vertices = np.array([
        [0.0, 0.0, 0.0],
        [side, 0.0, 0.0],
        [0.5 * side, 0.5 * math.sqrt(3) * side, 0.0],
    ]) + np.asarray(offset)
    return vertices


def test_self_entry_matches_polar_quadrature():
    mesh = TriMesh(equilateral(), np.array([[0, 1, 2]]))
    entry = assemble_single_layer(mesh)[0, 0]

    # each edge is seen from the centroid at inradius h over a 120 degree fan
    h = SIDE / (2 * math.sqrt(3))
    fan, _ = integrate.quad(lambda theta: h / math.cos(theta), -math.pi / 3, math.pi / 3,
                            epsabs=0, epsrel=1e-12)
    assert entry == pytest.approx(3 * fan / (4 * math.pi), rel=1e-8)


def test_triangle_potential_off_plane_matches_quadrature():
    corners = equilateral()
    x = np.array([0.05, 0.03, 0.07])
    normal = np.array([[0.0, 0.0, 1.0]])
    exact = triangle_potential((corners - x)[None, None, :, :], normal)[0, 0]

    def integrand(v, u):
        y = corners[0] + u * (corners[1] - corners[0]) + v * (corners[2] - corners[0])
        return 1.0 / np.linalg.norm(y - x)

    jacobian = 2 * 0.25 * math.sqrt(3) * SIDE ** 2
    oracle, _ = integrate.dblquad(integrand, 0, 1, 0, lambda u: 1 - u, epsabs=0, epsrel=1e-10)
    assert exact == pytest.approx(jacobian * oracle, rel=1e-8)


def test_far_panels_are_monopoles():
    vertices = np.vstack([equilateral(0.1), equilateral(0.1, offset=(10.0, 0.0, 0.0))])
    mesh = TriMesh(vertices, np.array([[0, 1, 2], [3, 4, 5]]))
    matrix = assemble_single_layer(mesh)
    distance = np.linalg.norm(mesh.centroids[1] - mesh.centroids[0])
    assert matrix[0, 1] == pytest.approx(mesh.areas[1] / (4 * math.pi * distance), rel=1e-3)
    assert matrix[0, 1] == pytest.approx(matrix[1, 0])


def test_degenerate_panel_rejected():
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    with pytest.raises(CapacitanceError, match="degenerate panel"):
        assemble_single_layer(TriMesh(vertices, np.array([[0, 1, 2]])))


def test_open_surface_rejected():
    mesh = triangulate(ReferenceShape.unit_sphere(), 0)
    open_mesh = TriMesh(mesh.vertices, mesh.triangles[:-1])
    with pytest.raises(GeometryError, match="open surface"):
        capacitance(open_mesh)


def test_sphere_capacitance_coarse(sphere_mesh):
    cap, density = capacitance(sphere_mesh)
    assert cap.value == pytest.approx(4 * math.pi, rel=5e-2)
    assert np.all(density.values > 0)
    # equilibrium density of a sphere is uniform
    assert density.values.std() / density.values.mean() < 5e-2


def test_capacitance_scales_with_size(coarse_sphere):
    cap, _ = capacitance(coarse_sphere)
    half, _ = capacitance(coarse_sphere.scaled(0.5))
    assert half.value == pytest.approx(0.5 * cap.value, rel=1e-10)
    assert cap.scaled(0.5).value == pytest.approx(half.value, rel=1e-10)


def test_capacitance_translation_invariant(coarse_sphere):
    cap, _ = capacitance(coarse_sphere)
    moved, _ = capacitance(coarse_sphere.translated([3.0, -1.0, 2.0]))
    assert moved.value == pytest.approx(cap.value, rel=1e-10)


def test_capacitance_rotation_invariant():
    ellipsoid = triangulate(ReferenceShape.ellipsoid([1.0, 0.6, 0.4]), 1)
    rotation = Rotation.from_euler("zyx", [0.7, -0.3, 1.9]).as_matrix()
    cap, _ = capacitance(ellipsoid)
    turned, _ = capacitance(ellipsoid.rotated(rotation))
    assert turned.value == pytest.approx(cap.value, rel=1e-10)


def test_sphere_capacitance_converges_monotonically():
    errors = [abs(capacitance(triangulate(ReferenceShape.unit_sphere(), r))[0].value - 4 * math.pi)
              for r in range(4)]
    assert all(b < a for a, b in zip(errors, errors[1:]))


def test_ellipsoid_density_is_positive():
    _, density = capacitance(triangulate(ReferenceShape.ellipsoid([1.0, 0.6, 0.4]), 2))
    assert np.all(density.values > 0)
    # charge gathers at the tips of the long axis
    tips = np.argmax(np.abs(density.mesh.centroids[:, 0]))
    assert density.values[tips] > density.values.mean()


def test_far_potential_of_equilibrium_density(sphere_mesh):
    cap, density = capacitance(sphere_mesh)
    x = np.array([[10.0, 0.0, 0.0]])
    value = single_layer_potential(sphere_mesh, density.values, x)[0]
    assert value == pytest.approx(cap.value / (4 * math.pi * 10.0), rel=2e-3)


def test_ellipsoid_capacitance_below_circumscribed_sphere():
    cap, _ = capacitance(triangulate(ReferenceShape.ellipsoid([1.0, 0.5, 0.5]), 2))
    assert 0 < cap.value < 4 * math.pi


def test_capacitance_must_be_positive():
    with pytest.raises(CapacitanceError):
        Capacitance(0.0)


@pytest.mark.slow
@pytest.mark.parametrize("radius", [1.0, 0.5])
def test_sphere_capacitance_fine(radius):
    mesh = triangulate(ReferenceShape.unit_sphere(), 4).scaled(radius)
    cap, _ = capacitance(mesh)
    assert cap.value == pytest.approx(4 * math.pi * radius, rel=5e-3)
