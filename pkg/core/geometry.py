"""
Geometry Engine for HeatCluster
Surface triangulation of reference shapes, OFF mesh import, construction of
periodic cavity lattices and the admissibility checks on clusters.
"""

import math
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from models.mesh import TriMesh
from models.cluster import Box, Cluster, OmegaPartition, ReferenceShape, ShapeKind
from utils.errors import GeometryError
from utils.logger import get_logger


MAX_REFINEMENT = 7

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0

_ICOSAHEDRON_VERTICES = np.array([
    [-1, _GOLDEN, 0], [1, _GOLDEN, 0], [-1, -_GOLDEN, 0], [1, -_GOLDEN, 0],
    [0, -1, _GOLDEN], [0, 1, _GOLDEN], [0, -1, -_GOLDEN], [0, 1, -_GOLDEN],
    [_GOLDEN, 0, -1], [_GOLDEN, 0, 1], [-_GOLDEN, 0, -1], [-_GOLDEN, 0, 1],
], dtype=float)

_ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


# ==========================================
# MESHES
# ==========================================

def icosahedron() -> TriMesh:
    """Regular icosahedron inscribed in the unit sphere"""
    vertices = _ICOSAHEDRON_VERTICES / np.linalg.norm(_ICOSAHEDRON_VERTICES, axis=1)[:, None]
    return orient_outward(TriMesh(vertices, _ICOSAHEDRON_FACES))


def orient_outward(mesh: TriMesh) -> TriMesh:
    """
    Ensure outward normals.

    Raises:
        GeometryError: If neighbouring panels disagree on winding
    """
    if not mesh.is_consistently_oriented():
        raise GeometryError("inconsistent panel winding")
    if mesh.signed_volume < 0:
        return mesh.reversed()
    return mesh


def triangulate(shape: ReferenceShape, refinement: int = 0) -> TriMesh:
    """
    Closed outward-oriented mesh of a reference shape.

    Spheres and ellipsoids start from the icosahedron, split each panel into
    four per level and project back onto the surface. Imported meshes are
    refined by flat midpoint subdivision.

    Args:
        shape: Reference shape B
        refinement: Subdivision levels, 0..7

    Returns:
        TriMesh with 20 * 4^refinement panels for analytic shapes

    Raises:
        GeometryError: "open surface" for an imported mesh with boundary edges
    """
    if refinement < 0 or refinement > MAX_REFINEMENT:
        raise GeometryError("refinement out of range", {'refinement': refinement})

    if shape.kind == ShapeKind.IMPORTED_MESH:
        if not shape.mesh.is_closed():
            raise GeometryError("open surface")
        mesh = orient_outward(shape.mesh)
        for _ in range(refinement):
            mesh = mesh.subdivided()
        return mesh

    mesh = icosahedron()
    for _ in range(refinement):
        mesh = mesh.subdivided(project_to_sphere=True)

    if shape.kind == ShapeKind.ELLIPSOID:
        mesh = TriMesh(mesh.vertices * np.asarray(shape.semi_axes), mesh.triangles)

    return mesh


def read_off(path: Union[str, Path]) -> TriMesh:
    """
    Read an ASCII OFF file.

    Polygonal faces are fan-triangulated. Comment lines start with '#'.

    Raises:
        GeometryError: If the file is malformed
    """
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise GeometryError(f"cannot read mesh file: {e}", {'path': str(path)})

    lines = [line.split('#', 1)[0].strip() for line in text.splitlines()]
    tokens = [line for line in lines if line]
    if not tokens or not tokens[0].startswith('OFF'):
        raise GeometryError("missing OFF header", {'path': str(path)})

    # counts may share the header line
    header_rest = tokens[0][3:].split()
    body = tokens[1:]
    if header_rest:
        counts = header_rest
    else:
        if not body:
            raise GeometryError("missing OFF counts", {'path': str(path)})
        counts, body = body[0].split(), body[1:]

    try:
        n_vertices, n_faces = int(counts[0]), int(counts[1])
        vertices = np.array([[float(v) for v in body[i].split()[:3]] for i in range(n_vertices)])
        faces = []
        for line in body[n_vertices:n_vertices + n_faces]:
            items = [int(v) for v in line.split()]
            size, polygon = items[0], items[1:items[0] + 1]
            if size < 3 or len(polygon) != size:
                raise GeometryError("malformed OFF face", {'path': str(path)})
            for k in range(1, size - 1):
                faces.append((polygon[0], polygon[k], polygon[k + 1]))
    except (ValueError, IndexError) as e:
        raise GeometryError(f"malformed OFF file: {e}", {'path': str(path)})

    if len(faces) == 0 or len(vertices) != n_vertices:
        raise GeometryError("truncated OFF file", {'path': str(path)})

    return TriMesh(vertices, np.array(faces, dtype=np.int64))


def write_off(mesh: TriMesh, path: Union[str, Path]) -> Path:
    """Write a mesh as ASCII OFF"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["OFF", f"{len(mesh.vertices)} {mesh.n_panels} 0"]
    lines += [" ".join(repr(float(c)) for c in v) for v in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    path.write_text("\n".join(lines) + "\n", encoding='utf-8')
    return path


def cavity_meshes(cluster: Cluster, reference: TriMesh):
    """Meshes of eps * B + z_j for every cavity"""
    return [reference.placed(cluster.eps, z) for z in cluster.centers]


# ==========================================
# CLUSTERS
# ==========================================

def cluster_from_centers(centers, eps: float, shape: ReferenceShape = None) -> Cluster:
    """
    Cluster from an explicit centre list.

    Raises:
        GeometryError: On coincident centres or overlapping cavities
    """
    cluster = Cluster(eps, np.asarray(centers, dtype=float), shape or ReferenceShape.unit_sphere())
    if cluster.M > 1:
        distances = cluster.center_distances()
        np.fill_diagonal(distances, np.inf)
        if distances.min() == 0.0:
            raise GeometryError("coincident centers")
        if cluster.d <= 0:
            raise GeometryError("overlapping cavities", {'d': cluster.d})
    return cluster


def _balanced_layout(M: int, extent: np.ndarray) -> Tuple[int, int, int]:
    """Factor M = nx * ny * nz so that cells of extent / n are as cubic as possible"""
    best, best_ratio = None, math.inf
    for nx in range(M, 0, -1):
        if M % nx:
            continue
        for ny in range(M // nx, 0, -1):
            if (M // nx) % ny:
                continue
            nz = M // (nx * ny)
            cell = extent / np.array([nx, ny, nz])
            ratio = cell.max() / cell.min()
            if ratio < best_ratio - 1e-12:
                best, best_ratio = (nx, ny, nz), ratio
    return best


def build_cluster(omega: Box, a: float, d0: float,
                  shape: ReferenceShape = None) -> Tuple[Cluster, OmegaPartition]:
    """
    Periodic lattice of M = [1/a] cavities of diameter a, one per cell of volume a.

    The cells tile a sub-box of omega similar to omega and centred in it; for
    cube-factorable M in a cube the cells are cubes of side a^(1/3). Neighbouring
    cavities keep a gap of at least d0 * eps.

    Raises:
        GeometryError: "violates separation condition" for d0 <= 1 or a
            lattice gap below d0 * eps,
            "cavity too large for cell" if a cavity crosses its cell walls
    """
    logger = get_logger()
    shape = shape or ReferenceShape.unit_sphere()

    if d0 <= 1:
        raise GeometryError("violates separation condition", {'d0': d0})
    if not a > 0:
        raise GeometryError("cavity diameter a must be positive", {'a': a})

    # guard against 1/a landing just below an integer
    M = math.floor(1.0 / a * (1.0 + 1e-12))
    if M < 1:
        raise GeometryError("a too large for a single cell", {'a': a})
    if M * a > omega.volume * (1.0 + 1e-12):
        raise GeometryError("domain too small for the cells", {'a': a, 'volume': omega.volume})

    extent = omega.extent
    layout = _balanced_layout(M, extent)
    shrink = (M * a / omega.volume) ** (1.0 / 3.0)
    cell_size = shrink * extent / np.asarray(layout)
    origin = omega.center - 0.5 * shrink * extent

    eps = a / shape.diameter
    radius = eps * shape.circumradius
    if radius > 0.5 * cell_size.min() * (1.0 + 1e-12):
        raise GeometryError("cavity too large for cell",
                            {'radius': radius, 'cell_size': cell_size.tolist()})

    partition = OmegaPartition(omega, a, d0, layout, tuple(cell_size), tuple(origin))
    cluster = Cluster(eps, partition.centers, shape)
    if cluster.d < d0 * eps * (1.0 - 1e-12):
        raise GeometryError("violates separation condition",
                            {'d0': d0, 'd': cluster.d, 'required': d0 * eps, 'M': M})

    logger.info("Cluster lattice built", M=M, layout=layout, a=a, d0=d0,
                eps=eps, cell_side=float(cell_size.min()), d=cluster.d)
    return cluster, partition


# ==========================================
# ADMISSIBILITY
# ==========================================

def interaction_sums(cluster: Cluster) -> np.ndarray:
    """sum_{j != i} d_ij^(-2) for every cavity"""
    gaps = cluster.gaps()
    if np.any(gaps <= 0):
        return np.full(cluster.M, np.inf)
    return np.sum(1.0 / np.square(gaps), axis=1)


def check_condition(cluster: Cluster) -> Tuple[bool, float]:
    """
    a * max_i sum_{j != i} d_ij^(-2) and whether it is below 1.

    Returns:
        (holds, value); a single cavity gives (True, 0.0)
    """
    if cluster.M == 1:
        return True, 0.0
    value = float(cluster.a * interaction_sums(cluster).max())
    holds = value < 1.0
    get_logger().log_condition_check("cluster", value, holds, M=cluster.M)
    return holds, value


def lattice_bound(cluster: Cluster) -> Tuple[float, float]:
    """
    Both sides of max_i sum_{j != i} d_ij^(-2) <= d^(-2) M^(1/3).

    The right side is an estimate up to a constant factor.
    """
    if cluster.M == 1:
        return 0.0, 0.0
    lhs = float(interaction_sums(cluster).max())
    rhs = float(cluster.d ** -2 * cluster.M ** (1.0 / 3.0))
    return lhs, rhs


def regime_exponents(cluster: Cluster) -> Tuple[float, float]:
    """
    Exponents (s, beta) with M ~ a^(-s) and d ~ a^beta.

    Raises:
        GeometryError: If a >= 1 or the cluster has one cavity
    """
    if cluster.a >= 1.0:
        raise GeometryError("regime exponents need a < 1", {'a': cluster.a})
    if cluster.M == 1:
        raise GeometryError("regime exponents need at least two cavities")
    log_a = math.log(cluster.a)
    return -math.log(cluster.M) / log_a, math.log(cluster.d) / log_a


def write_cluster_csv(cluster: Cluster, path: Union[str, Path]) -> Path:
    """Export centres as j, z_x, z_y, z_z, eps"""
    from core.output_manager import get_output_manager
    return get_output_manager().write_cluster(cluster, path)
