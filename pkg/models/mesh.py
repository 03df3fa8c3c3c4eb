"""
Triangulated Surface Model for HeatCluster
Flat-panel discretization of a cavity boundary.
"""

from dataclasses import dataclass, field
from typing import Dict, Any, Tuple

import numpy as np

from utils.errors import GeometryError


def solid_angle(R: np.ndarray) -> np.ndarray:
    """
    Signed solid angle of flat triangles.

    R holds corner offsets y_v - x with shape (..., 3, 3); the result is
    2 * atan2(R0 . (R1 x R2), denom) with shape (...).
    """
    lengths = np.linalg.norm(R, axis=-1)
    triple = np.einsum('...i,...i->...', R[..., 0, :], np.cross(R[..., 1, :], R[..., 2, :]))
    denom = np.prod(lengths, axis=-1)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        denom = denom + np.einsum('...i,...i->...', R[..., i, :], R[..., j, :]) * lengths[..., k]
    return 2.0 * np.arctan2(triple, denom)


@dataclass
class TriMesh:
    """
    Closed triangulated surface.

    Panels are flat triangles; per-panel centroid, area and unit outward
    normal are derived once at construction and treated as read-only.
    """

    vertices: np.ndarray
    triangles: np.ndarray

    centroids: np.ndarray = field(init=False, repr=False)
    areas: np.ndarray = field(init=False, repr=False)
    normals: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=float)
        self.triangles = np.ascontiguousarray(self.triangles, dtype=np.int64)
        self.validate()

        corners = self.corners
        cross = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        doubled = np.linalg.norm(cross, axis=1)

        self.centroids = corners.mean(axis=1)
        self.areas = 0.5 * doubled
        with np.errstate(invalid='ignore', divide='ignore'):
            self.normals = np.where(doubled[:, None] > 0, cross / doubled[:, None], 0.0)

        for name in ('vertices', 'triangles', 'centroids', 'areas', 'normals'):
            getattr(self, name).setflags(write=False)

    def validate(self) -> None:
        """
        Validate array shapes and vertex indices.

        Raises:
            GeometryError: If the arrays do not describe a triangle mesh
        """
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError("vertices must be an (N, 3) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise GeometryError("triangles must be an (F, 3) array")
        if len(self.triangles) == 0:
            raise GeometryError("mesh has no panels")
        if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
            raise GeometryError("triangle references a missing vertex")
        if not np.all(np.isfinite(self.vertices)):
            raise GeometryError("non-finite vertex coordinates")

    # ==========================================
    # DERIVED QUANTITIES
    # ==========================================

    @property
    def corners(self) -> np.ndarray:
        """Panel corner coordinates, shape (F, 3, 3)"""
        return self.vertices[self.triangles]

    @property
    def n_panels(self) -> int:
        return len(self.triangles)

    @property
    def total_area(self) -> float:
        return float(self.areas.sum())

    @property
    def signed_volume(self) -> float:
        """Enclosed volume by the divergence theorem; positive for outward winding"""
        c = self.corners
        return float(np.einsum('ij,ij->i', c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    @property
    def panel_diameters(self) -> np.ndarray:
        """Longest edge of every panel"""
        c = self.corners
        edges = np.stack([c[:, 1] - c[:, 0], c[:, 2] - c[:, 1], c[:, 0] - c[:, 2]], axis=1)
        return np.linalg.norm(edges, axis=2).max(axis=1)

    @property
    def equivalent_radii(self) -> np.ndarray:
        """Radius of the disk with the same area as each panel"""
        return np.sqrt(self.areas / np.pi)

    def edges(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unique undirected edges and how many panels share each one"""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        unique, counts = np.unique(undirected, axis=0, return_counts=True)
        return unique, counts

    def is_closed(self) -> bool:
        """Every edge is shared by exactly two panels"""
        _, counts = self.edges()
        return bool(np.all(counts == 2))

    def is_consistently_oriented(self) -> bool:
        """Every directed edge appears once, so neighbours traverse it in opposite senses"""
        t = self.triangles
        directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        unique = np.unique(directed, axis=0)
        return len(unique) == len(directed)

    def euler_characteristic(self) -> int:
        """V - E + F over the referenced vertices"""
        unique_edges, _ = self.edges()
        n_vertices = len(np.unique(self.triangles))
        return int(n_vertices - len(unique_edges) + len(self.triangles))

    @property
    def circumradius(self) -> float:
        """Largest vertex distance from the origin"""
        return float(np.linalg.norm(self.vertices, axis=1).max())

    @property
    def diameter(self) -> float:
        """Largest vertex-to-vertex distance"""
        from scipy.spatial.distance import pdist
        if len(self.vertices) < 2:
            return 0.0
        return float(pdist(self.vertices).max())

    def solid_angles(self, points: np.ndarray) -> np.ndarray:
        """
        Signed solid angle subtended by every panel at every point.

        Returns:
            Array of shape (N, F)
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return solid_angle(self.corners[None, :, :, :] - points[:, None, None, :])

    def winding_numbers(self, points: np.ndarray) -> np.ndarray:
        """1 inside the closed surface, 0 outside"""
        return self.solid_angles(points).sum(axis=1) / (4.0 * np.pi)

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Strict interior; surface points (winding 1/2) count as outside"""
        return np.abs(self.winding_numbers(points)) > 0.75

    # ==========================================
    # TRANSFORMATIONS
    # ==========================================

    def scaled(self, factor: float) -> 'TriMesh':
        """Dilation about the origin"""
        return TriMesh(self.vertices * factor, self.triangles)

    def translated(self, offset) -> 'TriMesh':
        return TriMesh(self.vertices + np.asarray(offset, dtype=float), self.triangles)

    def rotated(self, rotation: np.ndarray) -> 'TriMesh':
        """Apply a 3x3 orthogonal matrix about the origin"""
        return TriMesh(self.vertices @ np.asarray(rotation, dtype=float).T, self.triangles)

    def placed(self, eps: float, center) -> 'TriMesh':
        """The cavity eps * B + z built from a reference mesh of B"""
        return TriMesh(self.vertices * eps + np.asarray(center, dtype=float), self.triangles)

    def reversed(self) -> 'TriMesh':
        """Flip the winding of every panel"""
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def subdivided(self, project_to_sphere: bool = False) -> 'TriMesh':
        """
        Split every panel into four through its edge midpoints.

        Args:
            project_to_sphere: Push new vertices onto the unit sphere

        Returns:
            Refined mesh with 4x the panels
        """
        vertices = [v for v in self.vertices]
        midpoint_index: Dict[Tuple[int, int], int] = {}

        def midpoint(i: int, j: int) -> int:
            key = (i, j) if i < j else (j, i)
            if key not in midpoint_index:
                point = 0.5 * (self.vertices[i] + self.vertices[j])
                if project_to_sphere:
                    point = point / np.linalg.norm(point)
                midpoint_index[key] = len(vertices)
                vertices.append(point)
            return midpoint_index[key]

        faces = []
        for a, b, c in self.triangles:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            faces.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])

        return TriMesh(np.array(vertices), np.array(faces))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'vertices': self.vertices.tolist(),
            'triangles': self.triangles.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TriMesh':
        return cls(np.array(data['vertices'], dtype=float), np.array(data['triangles'], dtype=np.int64))

    def __str__(self) -> str:
        return f"TriMesh(panels={self.n_panels}, area={self.total_area:.6g})"
