"""
Space-Time Boundary Oracle for HeatCluster
Marching-on-in-time collocation for the exterior Dirichlet heat problem with
a single-layer ansatz: densities are piecewise constant on every panel and on
every interval (t_{m-1}, t_m], collocated at panel centroids and at t_k.

The time integral over each interval is exact (erfc weights); the spatial
integral uses the centroid rule off the diagonal and an area-equivalent disk
plus a static flat-triangle correction on the diagonal. The current-step
matrix is the same at every step, so it is factored once.
"""

import warnings
from typing import Dict, List, Sequence

import numpy as np
from scipy import linalg, integrate, special
from scipy.spatial.distance import cdist

from models.cluster import Cluster
from models.histories import SourceSpec, SpaceTimeDensity, TimeGrid, DensityHistory
from models.mesh import TriMesh
from models.records import FieldSample
from core.heat_kernel import cumulative_phi, disk_time_weight, FOUR_PI
from core.laplace_bem import triangle_potential
from utils.config import get_config
from utils.errors import ReferenceSolverError
from utils.logger import get_logger, get_performance_logger, get_error_logger


HORIZON_SLACK = 1e-12

# U diagonal ratio below which the current-step block counts as singular
PIVOT_RATIO_FLOOR = 1e-14

# panels closer than this many diameters get the 7-point rule
NEAR_FIELD_DIAMETERS = 4.0

# Dunavant degree-5 rule: (barycentric coordinates, weight)
_DUNAVANT_7 = (
    ((1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0), 0.225),
    ((0.797426985353087, 0.101286507323456, 0.101286507323456), 0.125939180544827),
    ((0.101286507323456, 0.797426985353087, 0.101286507323456), 0.125939180544827),
    ((0.101286507323456, 0.101286507323456, 0.797426985353087), 0.125939180544827),
    ((0.059715871789770, 0.470142064105115, 0.470142064105115), 0.132394152788506),
    ((0.470142064105115, 0.059715871789770, 0.470142064105115), 0.132394152788506),
    ((0.470142064105115, 0.470142064105115, 0.059715871789770), 0.132394152788506),
)


# ==========================================
# PANEL WEIGHTS
# ==========================================

def static_self_potentials(meshes: Sequence[TriMesh]) -> np.ndarray:
    """Integral of 1/(4 pi |x_p - y|) over panel p itself, x_p its centroid"""
    parts = []
    for mesh in meshes:
        R = mesh.corners - mesh.centroids[:, None, :]
        parts.append(triangle_potential(R[None, :, :, :], mesh.normals)[0] / FOUR_PI)
    return np.concatenate(parts)


def self_window_weights(radii: np.ndarray, static: np.ndarray, s0, s1) -> np.ndarray:
    """
    Panel self weight for lags t - tau in [s0, s1].

    Area-equivalent disk weight plus (static triangle - static disk) spread
    over time like the kernel at the disk rim; the sum over all windows
    recovers the static triangle value.
    """
    disk = disk_time_weight(radii, s0, s1)
    rim = FOUR_PI * radii * (cumulative_phi(radii, s1) - cumulative_phi(radii, s0))
    return disk + (static - 0.5 * radii) * rim


class LagOperator:
    """
    Lag matrices W^l[q, p] = weight of sigma_p on (t_{k-l-1}, t_{k-l}] at (x_q, t_k).

    The smallest lags are kept while they fit in the cache budget; larger
    lags are rebuilt on demand.
    """

    def __init__(self, density_layout: SpaceTimeDensity, dt: float, budget_mb: int):
        self.dt = dt
        self.areas = density_layout.areas
        self.radii = density_layout.radii
        self.static = static_self_potentials(density_layout.meshes)
        centroids = density_layout.centroids
        self.distances = cdist(centroids, centroids)
        np.fill_diagonal(self.distances, 1.0)
        self.n_panels = len(centroids)

        matrix_bytes = self.n_panels * self.n_panels * 8
        self.capacity = max(1, int(budget_mb * 1024 * 1024 // matrix_bytes))
        self._cache: Dict[int, np.ndarray] = {}
        self.rebuilds = 0

    def _build(self, lag: int) -> np.ndarray:
        s0, s1 = lag * self.dt, (lag + 1) * self.dt
        matrix = (cumulative_phi(self.distances, s1) - cumulative_phi(self.distances, s0)) * self.areas[None, :]
        diagonal = self_window_weights(self.radii, self.static, s0, s1)
        np.fill_diagonal(matrix, diagonal)
        return matrix

    def matrix(self, lag: int) -> np.ndarray:
        cached = self._cache.get(lag)
        if cached is not None:
            return cached
        built = self._build(lag)
        if len(self._cache) < self.capacity:
            self._cache[lag] = built
        else:
            self.rebuilds += 1
        return built


def _empty_density(meshes: Sequence[TriMesh], grid: TimeGrid) -> SpaceTimeDensity:
    total = sum(m.n_panels for m in meshes)
    return SpaceTimeDensity(list(meshes), grid, np.zeros((total, grid.n_steps + 1)))


def _boundary_trace(source: SourceSpec, points: np.ndarray, grid: TimeGrid) -> np.ndarray:
    try:
        trace = np.stack([source.evaluate(points, t) for t in grid.nodes], axis=1)
    except Exception as e:
        raise ReferenceSolverError("source evaluation failed", {'cause': str(e)})
    if not np.all(np.isfinite(trace)):
        raise ReferenceSolverError("source evaluation failed")
    return trace


def factor_current_block(matrix: np.ndarray):
    """
    LU factors of the current-step block.

    Raises:
        ReferenceSolverError: "time step too large for mesh" if the block is singular
    """
    with warnings.catch_warnings():
        warnings.simplefilter('error', linalg.LinAlgWarning)
        try:
            lu, piv = linalg.lu_factor(matrix, check_finite=True)
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as e:
            raise ReferenceSolverError("time step too large for mesh", {'cause': str(e)})
    pivots = np.abs(np.diag(lu))
    if pivots.min() <= PIVOT_RATIO_FLOOR * pivots.max():
        raise ReferenceSolverError("time step too large for mesh",
                                   {'pivot_ratio': float(pivots.min() / pivots.max())})
    return lu, piv


# ==========================================
# SOLVE
# ==========================================

def solve_boundary_density(cluster: Cluster, meshes: Sequence[TriMesh], source: SourceSpec,
                           grid: TimeGrid) -> SpaceTimeDensity:
    """
    Marching-on-in-time solution of sum_j S_j[sigma_j] = f on every cavity boundary.

    Args:
        cluster: Cavity layout (used for logging and size checks)
        meshes: One placed mesh per cavity
        source: Incident field f
        grid: Uniform time grid

    Returns:
        SpaceTimeDensity with values[:, 0] = 0

    Raises:
        ReferenceSolverError: "time step too large for mesh" on a singular
            current-step block, or if the problem exceeds oracle scale
    """
    config = get_config()
    logger = get_logger()
    perf = get_performance_logger()

    if len(meshes) != cluster.M:
        raise ReferenceSolverError("one mesh per cavity required", {'meshes': len(meshes), 'M': cluster.M})
    layout = _empty_density(meshes, grid)
    if layout.n_panels > config.solver.max_oracle_panels * cluster.M or grid.n_steps > config.solver.max_oracle_steps:
        raise ReferenceSolverError("problem exceeds oracle scale",
                                   {'panels': layout.n_panels, 'steps': grid.n_steps})

    trace = _boundary_trace(source, layout.centroids, grid)

    perf.start_timing("solve_boundary_density")
    operator = LagOperator(layout, grid.dt, config.solver.lag_cache_mb)
    try:
        lu_piv = factor_current_block(operator.matrix(0))
    except ReferenceSolverError as e:
        get_error_logger().log_solver_error("heat_bem_reference", e, panels=layout.n_panels, dt=grid.dt)
        raise

    values = np.zeros((layout.n_panels, grid.n_steps + 1))
    for k in range(1, grid.n_steps + 1):
        rhs = trace[:, k].copy()
        for lag in range(1, k):
            rhs -= operator.matrix(lag) @ values[:, k - lag]
        values[:, k] = linalg.lu_solve(lu_piv, rhs)

    elapsed = perf.end_timing("solve_boundary_density", panels=layout.n_panels, steps=grid.n_steps)
    logger.log_solver_event("heat_bem_reference", "marched", M=cluster.M, panels=layout.n_panels,
                            steps=grid.n_steps, cached_lags=len(operator._cache),
                            rebuilds=operator.rebuilds, elapsed_ms=round(elapsed, 3))
    return SpaceTimeDensity(list(meshes), grid, values)


# ==========================================
# EVALUATION
# ==========================================

def _interval_windows(grid: TimeGrid, t: float):
    """Lag windows [t - t_m, t - t_{m-1}] of every interval m = 1..n, clipped at zero"""
    nodes = grid.nodes
    s0 = np.maximum(t - nodes[1:], 0.0)
    s1 = np.maximum(t - nodes[:-1], 0.0)
    return s0, s1


def _panel_weights(mesh: TriMesh, x: np.ndarray, s0: np.ndarray, s1: np.ndarray) -> np.ndarray:
    """
    Space-time weights of every panel of one mesh at point x, shape (F, n).

    Far panels use the centroid rule, near panels the 7-point rule and a panel
    whose centroid lies within its equivalent radius of x the disk split with
    the static flat-triangle value at x.
    """
    distances = np.linalg.norm(mesh.centroids - x, axis=1)
    radii = mesh.equivalent_radii
    weights = (cumulative_phi(distances[:, None], s1[None, :])
               - cumulative_phi(distances[:, None], s0[None, :])) * mesh.areas[:, None]

    touching = distances < radii
    near = (distances < NEAR_FIELD_DIAMETERS * mesh.panel_diameters) & ~touching

    corners = mesh.corners
    for p in np.flatnonzero(near):
        total = np.zeros(len(s0))
        for barycentric, w in _DUNAVANT_7:
            y = np.dot(barycentric, corners[p])
            r = np.linalg.norm(y - x)
            total += w * (cumulative_phi(r, s1) - cumulative_phi(r, s0))
        weights[p] = total * mesh.areas[p]

    for p in np.flatnonzero(touching):
        R = corners[p] - x
        static = triangle_potential(R[None, None, :, :], mesh.normals[p:p + 1])[0, 0] / FOUR_PI
        weights[p] = self_window_weights(radii[p], static, s0, s1)

    return weights


def single_layer_heat_potential(meshes: Sequence[TriMesh], grid: TimeGrid, values: np.ndarray,
                                x, t: float) -> float:
    """
    Discrete single-layer heat potential of a piecewise-constant density.

    values[:, m] is the density on (t_{m-1}, t_m]; column 0 is ignored.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if t <= 0:
        return 0.0
    s0, s1 = _interval_windows(grid, t)
    total = 0.0
    offset = 0
    for mesh in meshes:
        weights = _panel_weights(mesh, x, s0, s1)
        block = values[offset:offset + mesh.n_panels, 1:]
        total += float(np.sum(weights * block))
        offset += mesh.n_panels
    return total


def eval_reference_field(density: SpaceTimeDensity, x, t: float) -> float:
    """
    u(x, t) = sum_j int_0^t int_{dD_j} Phi(x, t; y, tau) sigma_j(y, tau) ds dtau.

    Raises:
        ReferenceSolverError: "evaluation point inside cavity" or
            "beyond simulated horizon"
    """
    x = np.asarray(x, dtype=float).reshape(3)
    for mesh in density.meshes:
        if mesh.contains(x[None, :])[0]:
            raise ReferenceSolverError("evaluation point inside cavity", {'x': x.tolist()})
    if t > density.grid.T * (1.0 + HORIZON_SLACK):
        raise ReferenceSolverError("beyond simulated horizon", {'t': t, 'T': density.grid.T})
    return single_layer_heat_potential(density.meshes, density.grid, density.values, x, t)


def sample_reference_field(density: SpaceTimeDensity, points, times) -> List[FieldSample]:
    return [
        FieldSample.at(p, t, eval_reference_field(density, p, t))
        for p in np.atleast_2d(points) for t in times
    ]


# ==========================================
# DERIVED QUANTITIES
# ==========================================

def charge_history(density: SpaceTimeDensity) -> np.ndarray:
    """q_j(t_k) = sum over panels of cavity j of sigma * area, shape (M, n + 1)"""
    weighted = density.values * density.areas[:, None]
    return np.stack([
        weighted[density.offsets[j]:density.offsets[j + 1]].sum(axis=0)
        for j in range(density.M)
    ])


def harmonic_density(density: SpaceTimeDensity, panel: int, r, t: float) -> np.ndarray:
    """
    Time-integrated density of the harmonic reformulation for one panel:

        phi(r, t) = sum_m sigma^m [erfc(r / 2 sqrt(t - t_{m-1})) - erfc(r / 2 sqrt(t - t_m))]

    It tends to sigma(y, t) as r -> 0.
    """
    r = np.atleast_1d(np.asarray(r, dtype=float))
    s0, s1 = _interval_windows(density.grid, t)
    sigma = density.values[panel, 1:]

    def erfc_window(elapsed: np.ndarray) -> np.ndarray:
        out = np.zeros((len(r), len(elapsed)))
        live = elapsed > 0
        out[:, live] = special.erfc(r[:, None] / (2.0 * np.sqrt(elapsed[live])[None, :]))
        return out

    return (erfc_window(s1) - erfc_window(s0)) @ sigma


def compare_charges(density: SpaceTimeDensity, caps, history: DensityHistory) -> np.ndarray:
    """
    Per-cavity L2(0, T) distance between q_j / C_j and alpha_j.

    Raises:
        ReferenceSolverError: "incompatible discretizations" on different grids
            or cavity counts
    """
    if density.grid != history.grid or density.M != history.M:
        raise ReferenceSolverError("incompatible discretizations")
    C = np.array([float(getattr(c, 'value', c)) for c in caps], dtype=float)
    ratio = charge_history(density) / C[:, None]
    squares = integrate.trapezoid(np.square(ratio - history.alphas), density.grid.nodes, axis=1)
    return np.sqrt(squares)


# ==========================================
# QUASI-STATIC LIMIT
# ==========================================

def static_capacitance(mesh: TriMesh) -> float:
    """
    Capacitance of the long-time limit of the oracle's own panel operator.

    Off-diagonal entries are the centroid rule of 1/(4 pi r), diagonal
    entries the flat-triangle self potentials: exactly the sum over all
    lags of the matrices the march uses.
    """
    distances = cdist(mesh.centroids, mesh.centroids)
    np.fill_diagonal(distances, 1.0)
    matrix = mesh.areas[None, :] / (FOUR_PI * distances)
    np.fill_diagonal(matrix, static_self_potentials([mesh]))
    try:
        values = linalg.solve(matrix, np.ones(mesh.n_panels))
    except linalg.LinAlgError as e:
        raise ReferenceSolverError("ill-conditioned static system", {'cause': str(e)})
    return float(np.dot(values, mesh.areas))


def point_charge_field(centers: np.ndarray, charges: np.ndarray, grid: TimeGrid, x, t: float) -> float:
    """
    Field of point charges held piecewise constant on the oracle's intervals.

    charges[j, m] is the charge of centre j on (t_{m-1}, t_m]; each interval
    gets its exact time window, as in single_layer_heat_potential.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if t <= 0:
        return 0.0
    s0, s1 = _interval_windows(grid, t)
    distances = np.linalg.norm(np.atleast_2d(centers) - x, axis=1)
    weights = cumulative_phi(distances[:, None], s1[None, :]) - cumulative_phi(distances[:, None], s0[None, :])
    return float(np.sum(weights * np.asarray(charges)[:, 1:]))
