"""
Cavity Cluster Models for HeatCluster
Reference shapes, computational boxes, clusters of scaled cavities and the
periodic partition of a box into cells of volume a.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Dict, Any, Tuple

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .mesh import TriMesh
from utils.errors import GeometryError


class ShapeKind(Enum):
    """Supported reference shapes B"""
    UNIT_SPHERE = "unit_sphere"
    ELLIPSOID = "ellipsoid"
    IMPORTED_MESH = "imported_mesh"


@dataclass
class ReferenceShape:
    """
    Reference domain B containing the origin.

    Every cavity of a cluster is eps * B + z_j for one shared shape.
    """

    kind: ShapeKind = ShapeKind.UNIT_SPHERE
    semi_axes: Optional[Tuple[float, float, float]] = None
    mesh_path: Optional[str] = None
    mesh: Optional[TriMesh] = field(default=None, repr=False)

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = ShapeKind(self.kind)
        if self.semi_axes is not None:
            self.semi_axes = tuple(float(s) for s in self.semi_axes)
        self.validate()

    def validate(self) -> None:
        """
        Raises:
            GeometryError: If the shape parameters are inconsistent
        """
        if self.kind == ShapeKind.ELLIPSOID:
            if self.semi_axes is None or len(self.semi_axes) != 3:
                raise GeometryError("ellipsoid requires three semi-axes")
            if min(self.semi_axes) <= 0:
                raise GeometryError("ellipsoid semi-axes must be positive")
        if self.kind == ShapeKind.IMPORTED_MESH and self.mesh is None:
            raise GeometryError("imported shape requires a mesh")
        if self.kind == ShapeKind.IMPORTED_MESH and not self.mesh.contains(np.zeros((1, 3)))[0]:
            raise GeometryError("reference shape must contain the origin")

    @classmethod
    def unit_sphere(cls) -> 'ReferenceShape':
        return cls(ShapeKind.UNIT_SPHERE)

    @classmethod
    def ellipsoid(cls, semi_axes) -> 'ReferenceShape':
        return cls(ShapeKind.ELLIPSOID, semi_axes=tuple(semi_axes))

    @classmethod
    def imported(cls, mesh: TriMesh, mesh_path: Optional[str] = None) -> 'ReferenceShape':
        return cls(ShapeKind.IMPORTED_MESH, mesh_path=mesh_path, mesh=mesh)

    @property
    def diameter(self) -> float:
        """Nominal diameter of B"""
        if self.kind == ShapeKind.UNIT_SPHERE:
            return 2.0
        if self.kind == ShapeKind.ELLIPSOID:
            return 2.0 * max(self.semi_axes)
        return self.mesh.diameter

    @property
    def circumradius(self) -> float:
        """Radius of the smallest origin-centred ball holding B"""
        if self.kind == ShapeKind.UNIT_SPHERE:
            return 1.0
        if self.kind == ShapeKind.ELLIPSOID:
            return max(self.semi_axes)
        return self.mesh.circumradius

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Membership of reference-frame points in the closed shape"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == ShapeKind.UNIT_SPHERE:
            return np.einsum('ij,ij->i', points, points) <= 1.0
        if self.kind == ShapeKind.ELLIPSOID:
            scaled = points / np.asarray(self.semi_axes)
            return np.einsum('ij,ij->i', scaled, scaled) <= 1.0
        return self.mesh.contains(points)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind.value,
            'semi_axes': list(self.semi_axes) if self.semi_axes else None,
            'mesh_path': self.mesh_path,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ReferenceShape':
        """Build a shape; imported meshes are read from mesh_path"""
        kind = ShapeKind(data.get('kind', 'unit_sphere'))
        mesh = None
        if kind == ShapeKind.IMPORTED_MESH:
            from core.geometry import read_off
            mesh = read_off(data['mesh_path'])
        return cls(kind, semi_axes=data.get('semi_axes'), mesh_path=data.get('mesh_path'), mesh=mesh)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box [lower, upper]"""

    lower: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    upper: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, 'lower', tuple(float(v) for v in self.lower))
        object.__setattr__(self, 'upper', tuple(float(v) for v in self.upper))
        if len(self.lower) != 3 or len(self.upper) != 3:
            raise GeometryError("box corners must be 3-vectors")
        if any(u <= l for l, u in zip(self.lower, self.upper)):
            raise GeometryError("box has non-positive extent")

    @property
    def extent(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower) + np.asarray(self.upper))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.extent))

    def contains_closure(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((points >= np.asarray(self.lower)) & (points <= np.asarray(self.upper)), axis=1)

    def to_dict(self) -> Dict[str, Any]:
        return {'lower': list(self.lower), 'upper': list(self.upper)}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Box':
        return cls(tuple(data['lower']), tuple(data['upper']))

    @classmethod
    def unit(cls) -> 'Box':
        return cls()


@dataclass
class Cluster:
    """
    M cavities D_j = eps * B + z_j sharing one reference shape.

    Pairwise gaps d_ij use the conservative surrogate
    |z_i - z_j| - 2 * eps * circumradius(B), exact for spheres.
    """

    eps: float
    centers: np.ndarray
    shape: ReferenceShape = field(default_factory=ReferenceShape.unit_sphere)

    def __post_init__(self):
        self.centers = np.ascontiguousarray(np.atleast_2d(self.centers), dtype=float)
        self.validate()
        self.centers.setflags(write=False)

    def validate(self) -> None:
        """
        Structural checks only; separation is checked by the geometry builders.

        Raises:
            GeometryError: If the scale or centres are malformed
        """
        if not np.isfinite(self.eps) or self.eps <= 0:
            raise GeometryError("cluster scale eps must be positive")
        if self.centers.ndim != 2 or self.centers.shape[1] != 3 or len(self.centers) == 0:
            raise GeometryError("centers must be a non-empty (M, 3) array")
        if not np.all(np.isfinite(self.centers)):
            raise GeometryError("non-finite cavity center")

    @property
    def M(self) -> int:
        return len(self.centers)

    @property
    def a(self) -> float:
        """Largest cavity diameter"""
        return self.eps * self.shape.diameter

    @property
    def cavity_radius(self) -> float:
        return self.eps * self.shape.circumradius

    def center_distances(self) -> np.ndarray:
        """|z_i - z_j| as an (M, M) matrix"""
        if self.M == 1:
            return np.zeros((1, 1))
        return squareform(pdist(self.centers))

    def gaps(self) -> np.ndarray:
        """d_ij with +inf on the diagonal"""
        gaps = self.center_distances() - 2.0 * self.cavity_radius
        np.fill_diagonal(gaps, np.inf)
        return gaps

    @property
    def d(self) -> float:
        """Smallest pairwise gap; +inf for a single cavity"""
        return float(self.gaps().min())

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Which points lie in the closure of some cavity"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.zeros(len(points), dtype=bool)
        reach = self.cavity_radius
        for z in self.centers:
            offset = points - z
            near = np.einsum('ij,ij->i', offset, offset) <= reach * reach
            if np.any(near):
                inside[near] |= self.shape.contains(offset[near] / self.eps)
        return inside

    def to_dict(self) -> Dict[str, Any]:
        return {
            'eps': self.eps,
            'centers': self.centers.tolist(),
            'shape': self.shape.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Cluster':
        return cls(
            eps=float(data['eps']),
            centers=np.array(data['centers'], dtype=float),
            shape=ReferenceShape.from_dict(data.get('shape', {})),
        )

    def __str__(self) -> str:
        return f"Cluster(M={self.M}, eps={self.eps:.6g}, a={self.a:.6g})"


@dataclass
class OmegaPartition:
    """
    Periodic subdivision of a box into M cells of volume a.

    The cells tile a centred sub-box of omega; `layout` is the number of
    cells along each axis and `cell_size` their edge lengths.
    """

    omega: Box
    a: float
    d0: float
    layout: Tuple[int, int, int]
    cell_size: Tuple[float, float, float]
    origin: Tuple[float, float, float]

    def __post_init__(self):
        self.layout = tuple(int(n) for n in self.layout)
        self.cell_size = tuple(float(h) for h in self.cell_size)
        self.origin = tuple(float(o) for o in self.origin)

    @property
    def cell_count(self) -> int:
        return int(np.prod(self.layout))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.cell_size))

    @property
    def cell_side(self) -> float:
        """Edge length of the cells (equal to a^(1/3) for cubic cells)"""
        return min(self.cell_size)

    @property
    def centers(self) -> np.ndarray:
        """Cell centres in C order (x slowest)"""
        axes = [
            self.origin[k] + (np.arange(self.layout[k]) + 0.5) * self.cell_size[k]
            for k in range(3)
        ]
        grid = np.meshgrid(*axes, indexing='ij')
        return np.stack([g.ravel() for g in grid], axis=1)

    @property
    def sub_box(self) -> Box:
        upper = tuple(o + n * h for o, n, h in zip(self.origin, self.layout, self.cell_size))
        return Box(self.origin, upper)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'omega': self.omega.to_dict(),
            'a': self.a,
            'd0': self.d0,
            'layout': list(self.layout),
            'cell_size': list(self.cell_size),
            'origin': list(self.origin),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'OmegaPartition':
        return cls(
            omega=Box.from_dict(data['omega']),
            a=float(data['a']),
            d0=float(data['d0']),
            layout=tuple(data['layout']),
            cell_size=tuple(data['cell_size']),
            origin=tuple(data['origin']),
        )
