"""
Time-Dependent Models for HeatCluster
Uniform time grids, heat sources and the density histories produced by the
point-interaction march, the boundary oracle and the volume equation.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Dict, Any, Callable, List

import numpy as np

from .mesh import TriMesh
from utils.errors import SimulationError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes t_k = k * dt on [0, T]"""

    T: float
    n_steps: int

    def __post_init__(self):
        if not np.isfinite(self.T) or self.T <= 0:
            raise SimulationError("time horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise SimulationError("n_steps must be a positive integer")
        object.__setattr__(self, 'n_steps', int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def refined(self, factor: int = 2) -> 'TimeGrid':
        return TimeGrid(self.T, self.n_steps * factor)

    def to_dict(self) -> Dict[str, Any]:
        return {'T': self.T, 'n_steps': self.n_steps}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TimeGrid':
        return cls(float(data['T']), int(data['n_steps']))


class SourceKind(Enum):
    POINT_SOURCE = "point_source"
    SMOOTH = "smooth"


@dataclass
class SourceSpec:
    """
    Incident heat f(x, t).

    A point source is f = Phi(x, t; z*, 0). A smooth source is any callable
    f(points, t) returning one value per point; `smooth_table` builds the
    spatially uniform case from a time profile.
    """

    kind: SourceKind
    z_star: Optional[np.ndarray] = None
    func: Optional[Callable[[np.ndarray, float], np.ndarray]] = field(default=None, repr=False)
    table_times: Optional[np.ndarray] = None
    table_values: Optional[np.ndarray] = None
    scale: float = 1.0

    def __post_init__(self):
        if isinstance(self.kind, str):
            self.kind = SourceKind(self.kind)
        if self.kind == SourceKind.POINT_SOURCE:
            if self.z_star is None:
                raise SimulationError("point source requires z_star")
            self.z_star = np.asarray(self.z_star, dtype=float).reshape(3)
        elif self.func is None:
            raise SimulationError("smooth source requires a callable")

    @classmethod
    def point(cls, z_star, scale: float = 1.0) -> 'SourceSpec':
        return cls(SourceKind.POINT_SOURCE, z_star=np.asarray(z_star, dtype=float), scale=scale)

    @classmethod
    def smooth(cls, func: Callable[[np.ndarray, float], np.ndarray]) -> 'SourceSpec':
        return cls(SourceKind.SMOOTH, func=func)

    @classmethod
    def smooth_table(cls, times, values) -> 'SourceSpec':
        """
        Spatially uniform source with a piecewise-linear time profile.

        Raises:
            SimulationError: If the table is unsorted or nonzero at t = 0
        """
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or len(times) < 2:
            raise SimulationError("source table needs matching 1-D times and values")
        if np.any(np.diff(times) <= 0):
            raise SimulationError("source table times must increase")
        if times[0] != 0.0 or values[0] != 0.0:
            raise SimulationError("source table must start at (0, 0)")

        def profile(points: np.ndarray, t: float) -> np.ndarray:
            return np.full(len(np.atleast_2d(points)), np.interp(t, times, values))

        return cls(SourceKind.SMOOTH, func=profile, table_times=times, table_values=values)

    def scaled(self, factor: float) -> 'SourceSpec':
        """The source c * f"""
        if self.kind == SourceKind.POINT_SOURCE:
            return SourceSpec.point(self.z_star, self.scale * factor)
        inner = self.func
        return SourceSpec(SourceKind.SMOOTH, func=lambda p, t: factor * inner(p, t),
                          table_times=self.table_times,
                          table_values=None if self.table_values is None else factor * self.table_values)

    def evaluate(self, points: np.ndarray, t: float) -> np.ndarray:
        """f at each point at time t"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == SourceKind.POINT_SOURCE:
            from core.heat_kernel import phi_many
            r = np.linalg.norm(points - self.z_star, axis=1)
            return self.scale * phi_many(r, t)
        return np.asarray(self.func(points, t), dtype=float).reshape(len(points))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {'kind': self.kind.value}
        if self.kind == SourceKind.POINT_SOURCE:
            data['z_star'] = self.z_star.tolist()
            data['scale'] = self.scale
        elif self.table_times is not None:
            data['table'] = {'times': self.table_times.tolist(), 'values': self.table_values.tolist()}
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SourceSpec':
        if data.get('kind', 'point_source') == SourceKind.POINT_SOURCE.value:
            return cls.point(data['z_star'], float(data.get('scale', 1.0)))
        table = data['table']
        return cls.smooth_table(table['times'], table['values'])


@dataclass
class DensityHistory:
    """alpha_i(t_k) for every cavity, shape (M, n_steps + 1)"""

    grid: TimeGrid
    alphas: np.ndarray

    def __post_init__(self):
        self.alphas = np.asarray(self.alphas, dtype=float)
        if self.alphas.ndim != 2 or self.alphas.shape[1] != self.grid.n_steps + 1:
            raise SimulationError("alphas must have one column per time node")
        if not np.all(np.isfinite(self.alphas)):
            raise SimulationError("non-finite density history")
        self.alphas.setflags(write=False)

    @property
    def M(self) -> int:
        return self.alphas.shape[0]

    def at(self, t: float) -> np.ndarray:
        """alpha(t) by linear interpolation between nodes"""
        nodes = self.grid.nodes
        return np.array([np.interp(t, nodes, row) for row in self.alphas])

    def to_dict(self) -> Dict[str, Any]:
        return {'grid': self.grid.to_dict(), 'alphas': self.alphas.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'DensityHistory':
        return cls(TimeGrid.from_dict(data['grid']), np.array(data['alphas'], dtype=float))


@dataclass
class SpaceTimeDensity:
    """
    Piecewise-constant boundary density sigma on every panel of every cavity.

    values[:, k] is the density on the interval (t_{k-1}, t_k]; column 0 is
    identically zero.
    """

    meshes: List[TriMesh]
    grid: TimeGrid
    values: np.ndarray

    offsets: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        counts = [m.n_panels for m in self.meshes]
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        if self.values.shape != (self.offsets[-1], self.grid.n_steps + 1):
            raise SimulationError("density values do not match meshes and grid")
        self.values.setflags(write=False)

    @property
    def M(self) -> int:
        return len(self.meshes)

    @property
    def n_panels(self) -> int:
        return int(self.offsets[-1])

    def cavity_values(self, j: int) -> np.ndarray:
        return self.values[self.offsets[j]:self.offsets[j + 1]]

    def l2_norm(self) -> float:
        """L2 norm over the boundary and (0, T) of the piecewise-constant density"""
        weighted = self.areas[:, None] * np.square(self.values[:, 1:])
        return float(np.sqrt(self.grid.dt * weighted.sum()))

    @property
    def centroids(self) -> np.ndarray:
        return np.concatenate([m.centroids for m in self.meshes])

    @property
    def areas(self) -> np.ndarray:
        return np.concatenate([m.areas for m in self.meshes])

    @property
    def radii(self) -> np.ndarray:
        """Area-equivalent disk radius of each panel"""
        return np.concatenate([m.equivalent_radii for m in self.meshes])


@dataclass
class VolumeDensityHistory:
    """v(z_c, t_k) on the voxel cells, shape (cells, n_steps + 1)"""

    grid: TimeGrid
    values: np.ndarray
    c_bar: float = 0.0
    voxels: Optional[Any] = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n_steps + 1:
            raise SimulationError("volume density must have one column per time node")
        self.values.setflags(write=False)

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]
