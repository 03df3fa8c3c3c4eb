"""
Experiment Configuration Model for HeatCluster
Nested description of one run: geometry, source, time grid, solvers and
outputs. Parsed from JSON with dataclasses-json after schema validation.
"""

from dataclasses import dataclass, field
from typing import Optional, List, Dict, Any

from dataclasses_json import dataclass_json

from .cluster import Box, ReferenceShape
from .histories import SourceSpec, TimeGrid


PIPELINES = ('capacitance', 'flsim', 'refbem', 'effmed', 'sigma')


@dataclass_json
@dataclass
class ShapeBlock:
    kind: str = "unit_sphere"
    semi_axes: Optional[List[float]] = None
    mesh_path: Optional[str] = None


@dataclass_json
@dataclass
class ClusterBlock:
    """Either an explicit centre list with eps, or a lattice (a, d0, omega)"""
    kind: str = "explicit"
    centers: Optional[List[List[float]]] = None
    eps: Optional[float] = None
    a: Optional[float] = None
    d0: float = 2.0
    omega_lower: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    omega_upper: List[float] = field(default_factory=lambda: [1.0, 1.0, 1.0])

    @property
    def omega(self) -> Box:
        return Box(tuple(self.omega_lower), tuple(self.omega_upper))


@dataclass_json
@dataclass
class GeometryBlock:
    shape: ShapeBlock = field(default_factory=ShapeBlock)
    refinement: int = 2
    cluster: ClusterBlock = field(default_factory=ClusterBlock)


@dataclass_json
@dataclass
class SourceTable:
    times: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)


@dataclass_json
@dataclass
class SourceBlock:
    kind: str = "point_source"
    z_star: Optional[List[float]] = None
    scale: float = 1.0
    table: Optional[SourceTable] = None


@dataclass_json
@dataclass
class TimeBlock:
    T: float = 1.0
    n_steps: int = 100


@dataclass_json
@dataclass
class SolverBlock:
    pipelines: List[str] = field(default_factory=lambda: ['flsim'])
    c_bar: Optional[float] = None  # defaults to C_B / diam(B)
    voxel_refine: int = 1


@dataclass_json
@dataclass
class OutputBlock:
    directory: str = "data/results/run"
    sample_points: List[List[float]] = field(default_factory=list)
    sample_times: List[float] = field(default_factory=list)
    manifest: bool = True


@dataclass_json
@dataclass
class ExperimentConfig:
    """
    One experiment run.

    Built only through `validate_experiment`, so every instance has passed
    the schema checks.
    """

    name: str = "experiment"
    geometry: GeometryBlock = field(default_factory=GeometryBlock)
    source: SourceBlock = field(default_factory=SourceBlock)
    time: TimeBlock = field(default_factory=TimeBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def reference_shape(self) -> ReferenceShape:
        return ReferenceShape.from_dict(self.geometry.shape.to_dict())

    def source_spec(self) -> SourceSpec:
        if self.source.kind == 'point_source':
            return SourceSpec.point(self.source.z_star, self.source.scale)
        return SourceSpec.smooth_table(self.source.table.times, self.source.table.values)

    def time_grid(self) -> TimeGrid:
        return TimeGrid(self.time.T, self.time.n_steps)

    def summary(self) -> Dict[str, Any]:
        return {
            'name': self.name,
            'cluster': self.geometry.cluster.kind,
            'pipelines': list(self.solver.pipelines),
            'T': self.time.T,
            'n_steps': self.time.n_steps,
        }
