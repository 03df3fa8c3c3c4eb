"""
Experiment Service for HeatCluster
Loads and validates experiment configurations and runs the requested
pipelines, writing deterministic CSV output plus a SHA-256 manifest.

Validation happens on the raw JSON document before any solve; every
violation is reported as a ConfigError whose path is a JSON pointer.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from models.cluster import Cluster, OmegaPartition, ShapeKind
from models.experiment_config import ExperimentConfig, PIPELINES
from core.geometry import MAX_REFINEMENT, build_cluster, cavity_meshes, cluster_from_centers, triangulate
from core.laplace_bem import capacitance
from core.foldy_lax import sample_field, solve_alphas
from core.heat_bem_reference import sample_reference_field, solve_boundary_density
from core.effective_medium import (
    c_bar_from_reference, sample_W, solve_sigma, solve_v, voxel_grid_for_partition
)
from core.output_manager import PathLike, get_output_manager
from utils.config import get_config
from utils.errors import ConfigError, SimulationError
from utils.logger import get_logger, get_performance_logger, get_error_logger


# ==========================================
# SCHEMA CHECKS
# ==========================================

def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and np.isfinite(value)


def _is_integer(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _require_object(raw: Any, path: str) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError(path or "/", "must be an object")
    return raw


def _check_keys(raw: Dict[str, Any], allowed, path: str) -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}/{key}", "unknown key")


def _check_vector(value: Any, path: str) -> None:
    if not isinstance(value, list) or len(value) != 3 or not all(_is_number(v) for v in value):
        raise ConfigError(path, "must be a list of three numbers")


def _check_positive(raw: Dict[str, Any], key: str, path: str, required: bool = True) -> None:
    if key not in raw:
        if required:
            raise ConfigError(f"{path}/{key}", "required")
        return
    if not _is_number(raw[key]) or raw[key] <= 0:
        raise ConfigError(f"{path}/{key}", "must be a positive number")


def _check_geometry(raw: Dict[str, Any], base_dir: Path) -> str:
    geometry = _require_object(raw.get('geometry', {}), "/geometry")
    _check_keys(geometry, ('shape', 'refinement', 'cluster'), "/geometry")

    shape = _require_object(geometry.get('shape', {}), "/geometry/shape")
    _check_keys(shape, ('kind', 'semi_axes', 'mesh_path'), "/geometry/shape")
    kind = shape.get('kind', ShapeKind.UNIT_SPHERE.value)
    if kind not in [k.value for k in ShapeKind]:
        raise ConfigError("/geometry/shape/kind", f"unknown shape '{kind}'")
    if kind == ShapeKind.ELLIPSOID.value:
        _check_vector(shape.get('semi_axes'), "/geometry/shape/semi_axes")
        if min(shape['semi_axes']) <= 0:
            raise ConfigError("/geometry/shape/semi_axes", "semi-axes must be positive")
    if kind == ShapeKind.IMPORTED_MESH.value:
        if not isinstance(shape.get('mesh_path'), str):
            raise ConfigError("/geometry/shape/mesh_path", "required")
        mesh_path = Path(shape['mesh_path'])
        if not mesh_path.is_absolute():
            mesh_path = base_dir / mesh_path
        if not mesh_path.exists():
            raise ConfigError("/geometry/shape/mesh_path", f"file not found: {mesh_path}")
        shape['mesh_path'] = str(mesh_path)

    refinement = geometry.get('refinement', 2)
    if not _is_integer(refinement) or not 0 <= refinement <= MAX_REFINEMENT:
        raise ConfigError("/geometry/refinement", f"must be an integer in [0, {MAX_REFINEMENT}]")

    cluster = _require_object(geometry.get('cluster'), "/geometry/cluster")
    _check_keys(cluster, ('kind', 'centers', 'eps', 'a', 'd0', 'omega_lower', 'omega_upper'), "/geometry/cluster")
    cluster_kind = cluster.get('kind', 'explicit')
    if cluster_kind == 'explicit':
        centers = cluster.get('centers')
        if not isinstance(centers, list) or not centers:
            raise ConfigError("/geometry/cluster/centers", "must be a non-empty list")
        for i, center in enumerate(centers):
            _check_vector(center, f"/geometry/cluster/centers/{i}")
        _check_positive(cluster, 'eps', "/geometry/cluster")
    elif cluster_kind == 'lattice':
        _check_positive(cluster, 'a', "/geometry/cluster")
        if cluster['a'] > 1:
            raise ConfigError("/geometry/cluster/a", "must not exceed 1")
        if 'd0' in cluster and (not _is_number(cluster['d0']) or cluster['d0'] <= 1):
            raise ConfigError("/geometry/cluster/d0", "must exceed 1")
        for key in ('omega_lower', 'omega_upper'):
            if key in cluster:
                _check_vector(cluster[key], f"/geometry/cluster/{key}")
    else:
        raise ConfigError("/geometry/cluster/kind", f"unknown cluster kind '{cluster_kind}'")
    return cluster_kind


def _check_source(raw: Dict[str, Any]) -> None:
    source = _require_object(raw.get('source'), "/source")
    _check_keys(source, ('kind', 'z_star', 'scale', 'table'), "/source")
    kind = source.get('kind', 'point_source')
    if kind == 'point_source':
        _check_vector(source.get('z_star'), "/source/z_star")
        if 'scale' in source and not _is_number(source['scale']):
            raise ConfigError("/source/scale", "must be a number")
    elif kind == 'smooth':
        table = _require_object(source.get('table'), "/source/table")
        for key in ('times', 'values'):
            values = table.get(key)
            if not isinstance(values, list) or len(values) < 2 or not all(_is_number(v) for v in values):
                raise ConfigError(f"/source/table/{key}", "must be a list of at least two numbers")
        if len(table['times']) != len(table['values']):
            raise ConfigError("/source/table/values", "length differs from times")
        if any(b <= a for a, b in zip(table['times'], table['times'][1:])):
            raise ConfigError("/source/table/times", "must increase")
        if table['times'][0] != 0 or table['values'][0] != 0:
            raise ConfigError("/source/table", "must start at (0, 0)")
    else:
        raise ConfigError("/source/kind", f"unknown source kind '{kind}'")


def _check_time(raw: Dict[str, Any]) -> float:
    time = _require_object(raw.get('time'), "/time")
    _check_keys(time, ('T', 'n_steps'), "/time")
    _check_positive(time, 'T', "/time")
    n_steps = time.get('n_steps')
    if not _is_integer(n_steps) or n_steps < 1:
        raise ConfigError("/time/n_steps", "must be a positive integer")
    return float(time['T'])


def _check_solver(raw: Dict[str, Any], cluster_kind: str) -> None:
    solver = _require_object(raw.get('solver', {}), "/solver")
    _check_keys(solver, ('pipelines', 'c_bar', 'voxel_refine'), "/solver")
    pipelines = solver.get('pipelines', ['flsim'])
    if not isinstance(pipelines, list) or not pipelines:
        raise ConfigError("/solver/pipelines", "must be a non-empty list")
    for i, name in enumerate(pipelines):
        if name not in PIPELINES:
            raise ConfigError(f"/solver/pipelines/{i}", f"unknown pipeline '{name}'")
        if name in ('effmed', 'sigma') and cluster_kind != 'lattice':
            raise ConfigError(f"/solver/pipelines/{i}", f"'{name}' needs a lattice cluster")
    if solver.get('c_bar') is not None and (not _is_number(solver['c_bar']) or solver['c_bar'] < 0):
        raise ConfigError("/solver/c_bar", "must be a nonnegative number")
    refine = solver.get('voxel_refine', 1)
    if not _is_integer(refine) or refine < 1 or refine % 2 == 0:
        raise ConfigError("/solver/voxel_refine", "must be a positive odd integer")


def _check_output(raw: Dict[str, Any], T: float) -> None:
    output = _require_object(raw.get('output', {}), "/output")
    _check_keys(output, ('directory', 'sample_points', 'sample_times', 'manifest'), "/output")
    if 'directory' in output and not isinstance(output['directory'], str):
        raise ConfigError("/output/directory", "must be a string")
    points = output.get('sample_points', [])
    if not isinstance(points, list):
        raise ConfigError("/output/sample_points", "must be a list")
    for i, point in enumerate(points):
        _check_vector(point, f"/output/sample_points/{i}")
    times = output.get('sample_times', [])
    if not isinstance(times, list):
        raise ConfigError("/output/sample_times", "must be a list")
    for i, t in enumerate(times):
        if not _is_number(t) or t < 0 or t > T:
            raise ConfigError(f"/output/sample_times/{i}", "must lie in [0, T]")


def build_geometry(config: ExperimentConfig) -> Tuple[Cluster, Optional[OmegaPartition]]:
    """Cluster and, for lattices, the partition of omega"""
    block = config.geometry.cluster
    shape = config.reference_shape()
    if block.kind == 'lattice':
        return build_cluster(block.omega, block.a, block.d0, shape)
    return cluster_from_centers(block.centers, block.eps, shape), None


def validate_experiment(raw: Any, base_dir: Union[str, Path, None] = None) -> ExperimentConfig:
    """
    Check a raw configuration document and parse it.

    Semantic checks that need the geometry (source or sample points inside a
    cavity) run after parsing, still before any solve.

    Raises:
        ConfigError: On the first violation, with its JSON-pointer path
    """
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    raw = _require_object(raw, "/")
    _check_keys(raw, ('name', 'geometry', 'source', 'time', 'solver', 'output'), "")
    cluster_kind = _check_geometry(raw, base_dir)
    _check_source(raw)
    T = _check_time(raw)
    _check_solver(raw, cluster_kind)
    _check_output(raw, T)

    config = ExperimentConfig.from_dict(raw)
    try:
        cluster, _ = build_geometry(config)
    except SimulationError as e:
        raise ConfigError("/geometry/cluster", str(e))

    if config.source.kind == 'point_source' and cluster.contains(np.array([config.source.z_star]))[0]:
        raise ConfigError("/source/z_star", "source inside a cavity")
    for i, point in enumerate(config.output.sample_points):
        if cluster.contains(np.array([point]))[0]:
            raise ConfigError(f"/output/sample_points/{i}", "sample point inside a cavity")
    return config


def load_experiment(path: Union[str, Path]) -> ExperimentConfig:
    """
    Read and validate a JSON experiment file.

    Relative mesh paths are resolved against the file's directory.
    """
    path = Path(path)
    try:
        if not path.exists():
            raise ConfigError("/", f"file not found: {path}")
        try:
            with open(path, 'r', encoding='utf-8') as f:
                raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("/", f"invalid JSON: {e.msg} at line {e.lineno}")
        return validate_experiment(raw, path.parent)
    except ConfigError as e:
        get_error_logger().log_config_error(str(path), e, pointer=e.path)
        raise


# ==========================================
# RUN
# ==========================================

class ExperimentService:
    """Runs validated experiment configurations"""

    def __init__(self):
        self.config = get_config()
        self.logger = get_logger()
        self.perf = get_performance_logger()
        self.output = get_output_manager()

    def run_config(self, experiment: ExperimentConfig,
                   destinations: Optional[Dict[str, PathLike]] = None) -> Dict[str, Path]:
        """
        Execute every requested pipeline.

        Output files are named after their content (cluster.csv, alphas.csv,
        field.csv, field_refbem.csv, field_effmed.csv, sigma.csv,
        capacitance.json) inside the configured directory, followed by
        manifest.json.

        Args:
            experiment: Validated configuration
            destinations: Optional path per output name, replacing the
                default location of that file

        Returns:
            Mapping from written file name to path
        """
        self.logger.info("Experiment started", **experiment.summary())
        self.perf.start_timing("run_config")
        self.output.reset()
        directory = Path(experiment.output.directory)
        destinations = destinations or {}
        pipelines = experiment.solver.pipelines

        def target(name: str) -> Path:
            return Path(destinations.get(name, directory / name))

        try:
            cluster, partition = build_geometry(experiment)
            self.output.write_cluster(cluster, target("cluster.csv"))

            shape = experiment.reference_shape()
            reference = triangulate(shape, experiment.geometry.refinement)
            cap_B, _ = capacitance(reference)
            caps = [cap_B.scaled(cluster.eps)] * cluster.M
            if 'capacitance' in pipelines:
                self.output.write_json({
                    'C_B': cap_B.value,
                    'eps': cluster.eps,
                    'C_j': cap_B.value * cluster.eps,
                    'panels': reference.n_panels,
                }, target("capacitance.json"))

            source = experiment.source_spec()
            grid = experiment.time_grid()
            points = np.array(experiment.output.sample_points, dtype=float).reshape(-1, 3)
            times = list(experiment.output.sample_times)

            if 'flsim' in pipelines:
                history = solve_alphas(cluster, caps, source, grid)
                self.output.write_alphas(history, target("alphas.csv"))
                self.output.write_field(sample_field(cluster, caps, history, points, times),
                                        target("field.csv"))

            if 'refbem' in pipelines:
                density = solve_boundary_density(cluster, cavity_meshes(cluster, reference), source, grid)
                self.output.write_field(sample_reference_field(density, points, times),
                                        target("field_refbem.csv"))

            if 'effmed' in pipelines or 'sigma' in pipelines:
                voxels = voxel_grid_for_partition(partition, experiment.solver.voxel_refine)
                c_bar = experiment.solver.c_bar
                if c_bar is None:
                    c_bar = c_bar_from_reference(cap_B.value, shape.diameter)

                if 'effmed' in pipelines:
                    v_history = solve_v(voxels, c_bar, source, grid)
                    self.output.write_field(sample_W(voxels, c_bar, v_history, points, times),
                                            target("field_effmed.csv"))
                if 'sigma' in pipelines:
                    self.output.write_sigma(solve_sigma(voxels, c_bar), target("sigma.csv"))

        except SimulationError as e:
            get_error_logger().log_solver_error("run_config", e, experiment=experiment.name)
            raise

        written: List[Path] = self.output.reset()
        outputs = {p.name: p for p in written}
        if experiment.output.manifest and self.config.output.write_manifest:
            manifest = self.output.write_manifest(written, directory / "manifest.json")
            outputs[manifest.name] = manifest

        elapsed = self.perf.end_timing("run_config", files=len(outputs))
        self.logger.info("Experiment finished", name=experiment.name, files=len(outputs),
                         elapsed_ms=round(elapsed, 3))
        return outputs


# Global experiment service instance
_experiment_service: Optional[ExperimentService] = None


def get_experiment_service() -> ExperimentService:
    """Get the global experiment service"""
    global _experiment_service
    if _experiment_service is None:
        _experiment_service = ExperimentService()
    return _experiment_service


def run_config(experiment: ExperimentConfig,
               destinations: Optional[Dict[str, PathLike]] = None) -> Dict[str, Path]:
    return get_experiment_service().run_config(experiment, destinations)
