"""
Geometry tests for HeatCluster
Triangulation, OFF import, lattice construction and cluster admissibility.
"""

import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from core.geometry import (
    build_cluster, check_condition, cluster_from_centers, lattice_bound, read_off,
    regime_exponents, triangulate, write_cluster_csv, write_off,
)
from models.cluster import Box, Cluster, ReferenceShape
from utils.errors import GeometryError


CUBE_VERTICES = [
    (-1, -1, -1), (1, -1, -1), (1, 1, -1), (-1, 1, -1),
    (-1, -1, 1), (1, -1, 1), (1, 1, 1), (-1, 1, 1),
]
CUBE_FACES = [
    (0, 3, 2, 1), (4, 5, 6, 7), (0, 1, 5, 4),
    (1, 2, 6, 5), (2, 3, 7, 6), (3, 0, 4, 7),
]


def write_cube(path, faces=CUBE_FACES):
    lines = ["OFF", "# unit cube", f"{len(CUBE_VERTICES)} {len(faces)} 0"]
    lines += [" ".join(str(c) for c in v) for v in CUBE_VERTICES]
    lines += [f"{len(f)} " + " ".join(str(i) for i in f) for f in faces]
    path.write_text("\n".join(lines) + "\n")
    return path


# ==========================================
# TRIANGULATION
# ==========================================

@pytest.mark.parametrize("refinement", [0, 1, 2, 3])
def test_sphere_mesh_is_closed_and_outward(refinement):
    mesh = triangulate(ReferenceShape.unit_sphere(), refinement)
    assert mesh.n_panels == 20 * 4 ** refinement
    assert mesh.is_closed()
    assert mesh.is_consistently_oriented()
    assert mesh.euler_characteristic() == 2
    assert mesh.signed_volume > 0
    np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 1.0, rtol=1e-12)


def test_sphere_area_converges_quadratically():
    deficits = []
    for refinement in range(4):
        area = triangulate(ReferenceShape.unit_sphere(), refinement).total_area
        deficit = (4 * math.pi - area) / (4 * math.pi)
        assert 0 < deficit <= 0.5 * 4.0 ** -refinement
        deficits.append(deficit)
    assert all(b < a / 2.5 for a, b in zip(deficits, deficits[1:]))


def test_refinement_out_of_range():
    with pytest.raises(GeometryError, match="refinement out of range"):
        triangulate(ReferenceShape.unit_sphere(), 8)


def test_ellipsoid_vertices_on_surface():
    axes = np.array([1.0, 0.5, 0.25])
    mesh = triangulate(ReferenceShape.ellipsoid(axes), 3)
    np.testing.assert_allclose(np.sum((mesh.vertices / axes) ** 2, axis=1), 1.0, rtol=1e-12)
    assert mesh.signed_volume == pytest.approx(4 / 3 * math.pi * axes.prod(), rel=2e-2)


def test_ellipsoid_shape_metrics():
    shape = ReferenceShape.ellipsoid([1.0, 0.5, 0.25])
    assert shape.diameter == 2.0
    assert shape.circumradius == 1.0
    with pytest.raises(GeometryError):
        ReferenceShape.ellipsoid([1.0, 0.0, 1.0])


# ==========================================
# OFF IMPORT
# ==========================================

def test_read_off_fan_triangulates_quads(tmp_path):
    mesh = read_off(write_cube(tmp_path / "cube.off"))
    assert mesh.n_panels == 12
    shape = ReferenceShape.imported(mesh, str(tmp_path / "cube.off"))
    refined = triangulate(shape, 1)
    assert refined.n_panels == 48
    assert refined.signed_volume == pytest.approx(8.0)
    assert shape.diameter == pytest.approx(2 * math.sqrt(3))


def test_off_round_trip(tmp_path, coarse_sphere):
    mesh = read_off(write_off(coarse_sphere, tmp_path / "sphere.off"))
    np.testing.assert_array_equal(mesh.vertices, coarse_sphere.vertices)
    np.testing.assert_array_equal(mesh.triangles, coarse_sphere.triangles)


def test_open_surface_rejected(tmp_path):
    mesh = read_off(write_cube(tmp_path / "open.off", CUBE_FACES[:-1]))
    with pytest.raises(GeometryError, match="open surface"):
        triangulate(ReferenceShape.imported(mesh), 0)


def test_malformed_off_rejected(tmp_path):
    bad = tmp_path / "bad.off"
    bad.write_text("PLY\n1 1 0\n")
    with pytest.raises(GeometryError, match="missing OFF header"):
        read_off(bad)
    with pytest.raises(GeometryError, match="cannot read mesh file"):
        read_off(tmp_path / "missing.off")


# ==========================================
# CLUSTERS
# ==========================================

def test_lattice_of_four_cavities():
    cluster, partition = build_cluster(Box.unit(), 0.25, 1.5)
    assert cluster.M == 4
    assert cluster.a == pytest.approx(0.25)
    assert partition.cell_count == 4
    assert cluster.d >= 1.5 * cluster.eps


def test_cubic_lattice():
    cluster, partition = build_cluster(Box.unit(), 1 / 64, 2.0)
    assert cluster.M == 64
    assert partition.layout == (4, 4, 4)
    assert partition.cell_side == pytest.approx(0.25, rel=1e-12)
    assert abs(cluster.a - 1 / 64) <= 1e-12
    np.testing.assert_allclose(np.sort(np.unique(cluster.centers[:, 0])), [0.125, 0.375, 0.625, 0.875])
    assert not cluster.contains(cluster.centers + 0.12).any()


def test_lattice_rejects_weak_separation():
    with pytest.raises(GeometryError, match="violates separation condition"):
        build_cluster(Box.unit(), 0.01, 1.0)


@pytest.mark.parametrize("a, d0", [(1 / 8, 2.0), (1 / 27, 1.01), (1 / 64, 2.0), (1 / 64, 25.0), (1 / 125, 2.0)])
def test_lattice_gap_is_at_least_d0_eps(a, d0):
    cluster, partition = build_cluster(Box.unit(), a, d0)
    assert partition.d0 == d0
    assert cluster.d >= d0 * cluster.eps


def test_lattice_rejects_gap_below_d0_eps():
    with pytest.raises(GeometryError, match="violates separation condition") as info:
        build_cluster(Box.unit(), 1 / 64, 50.0)
    assert info.value.details["required"] == pytest.approx(50.0 / 128)
    assert info.value.details["d"] < info.value.details["required"]
    with pytest.raises(GeometryError, match="violates separation condition") as info:
        build_cluster(Box.unit(), 0.3, 2.0)
    assert info.value.details["M"] == 3


def test_lattice_sums_respect_bound():
    """Interaction sums stay within a constant of d^-2 M^(1/3)"""
    for a in (1 / 8, 1 / 27, 1 / 64, 1 / 216):
        cluster, _ = build_cluster(Box.unit(), a, 2.0)
        lhs, rhs = lattice_bound(cluster)
        assert 0 < lhs <= 4 * math.pi * rhs


def test_regime_exponents_of_lattice():
    cluster, _ = build_cluster(Box.unit(), 1 / 64, 2.0)
    s, beta = regime_exponents(cluster)
    assert s == pytest.approx(1.0, rel=1e-9)
    assert 0 < beta < 1


def test_condition_single_cavity():
    cluster = cluster_from_centers([[0.0, 0.0, 0.0]], 0.1)
    assert check_condition(cluster) == (True, 0.0)


def test_condition_value_for_a_pair():
    eps = 0.005
    gap = 0.2
    cluster = cluster_from_centers([[0, 0, 0], [gap + 2 * eps, 0, 0]], eps)
    holds, value = check_condition(cluster)
    assert holds
    assert value == pytest.approx(0.25, rel=1e-12)


def test_condition_invariant_under_rigid_motion(rng):
    centers = rng.uniform(-1, 1, size=(6, 3)) * 2.0
    cluster = cluster_from_centers(centers, 0.01)
    rotation = Rotation.from_euler('zyx', [0.3, -1.1, 2.0]).as_matrix()
    moved = cluster_from_centers(centers @ rotation.T + np.array([5.0, -3.0, 1.0]), 0.01)
    assert check_condition(moved)[1] == pytest.approx(check_condition(cluster)[1], rel=1e-10)


def test_cluster_from_centers_errors():
    with pytest.raises(GeometryError, match="coincident centers"):
        cluster_from_centers([[0, 0, 0], [0, 0, 0]], 0.1)
    with pytest.raises(GeometryError, match="overlapping cavities"):
        cluster_from_centers([[0, 0, 0], [0.15, 0, 0]], 0.1)
    with pytest.raises(GeometryError):
        Cluster(0.0, np.zeros((1, 3)))


def test_cluster_contains_closure():
    cluster = cluster_from_centers([[0, 0, 0], [1, 0, 0]], 0.1)
    inside = cluster.contains([[0.05, 0, 0], [1.05, 0, 0], [0.5, 0, 0]])
    assert inside.tolist() == [True, True, False]


def test_cluster_csv(tmp_path):
    cluster, _ = build_cluster(Box.unit(), 1 / 8, 2.0)
    path = write_cluster_csv(cluster, tmp_path / "cluster.csv")
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "j,z_x,z_y,z_z,eps"
    assert len(lines) == 9
