"""
Effective Medium for HeatCluster
Volume integral equation of the homogenized cluster

    v(x, t) + int_0^t int_Omega c_bar Phi(x, t; z, tau) v(z, tau) dz dtau = f(x, t)

on a voxel grid, the heat potential W it generates, and the elliptic problem
-lap(sigma) + c_bar sigma = 0, sigma = 1 on the boundary, for the effective
conductivity gamma = sigma^2.

Histories are piecewise constant in time: column k holds v on (t_{k-1}, t_k].
Space convolutions run on a zero-padded grid through scipy.fft.
"""

import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import fft, integrate, sparse
from scipy.sparse.linalg import cg
from scipy.spatial.distance import cdist

from models.cluster import Box, OmegaPartition
from models.histories import DensityHistory, SourceKind, SourceSpec, TimeGrid, VolumeDensityHistory
from models.records import FieldSample
from models.voxel_grid import EffectiveCoefficients, VoxelGrid
from core.heat_kernel import ball_lag_weights, cumulative_phi, lag_weights
from utils.config import get_config
from utils.errors import EffectiveMediumError
from utils.logger import get_logger, get_performance_logger, get_error_logger


HORIZON_SLACK = 1e-12


def equivalent_ball_radius(cell_volume: float) -> float:
    """Radius of the ball with the volume of one cell"""
    return (3.0 * cell_volume / (4.0 * math.pi)) ** (1.0 / 3.0)


def c_bar_from_reference(capacitance: float, diameter: float) -> float:
    """
    Scaled capacitance c_bar = C_j / a.

    A cavity eps * B has capacitance eps * C_B and size a = eps * diam(B),
    so the ratio only depends on the reference shape.
    """
    if diameter <= 0 or capacitance < 0:
        raise EffectiveMediumError("invalid reference capacitance")
    return float(capacitance) / float(diameter)


def _check_c_bar(c_bar: float) -> float:
    if not np.isfinite(c_bar) or c_bar < 0:
        raise EffectiveMediumError("c_bar must be nonnegative", {'c_bar': c_bar})
    return float(c_bar)


# ==========================================
# GRID HELPERS
# ==========================================

def ball_mask(omega: Box, shape: Sequence[int], radius: float, center=None) -> np.ndarray:
    """Cells whose centre lies within the ball"""
    trial = VoxelGrid(omega, tuple(shape))
    center = omega.center if center is None else np.asarray(center, dtype=float)
    inside = np.linalg.norm(trial.centers - center, axis=1) <= radius
    return inside.reshape(trial.shape)


def voxel_grid_for_partition(partition: OmegaPartition, refine: int = 1) -> VoxelGrid:
    """
    Voxel grid on the partition's cell box whose centres include every
    cavity centre.

    Raises:
        EffectiveMediumError: If refine is not a positive odd integer
    """
    if int(refine) != refine or refine < 1 or refine % 2 == 0:
        raise EffectiveMediumError("refinement must be a positive odd integer", {'refine': refine})
    shape = tuple(int(n) * int(refine) for n in partition.layout)
    return VoxelGrid(partition.sub_box, shape)


def _source_inside(voxels: VoxelGrid, z_star: np.ndarray) -> bool:
    """z* in the closure of an active cell"""
    lower = np.asarray(voxels.omega.lower)
    h = voxels.spacing
    position = (z_star - lower) / h
    shape = np.asarray(voxels.shape)
    if np.any(position < -1e-12) or np.any(position > shape + 1e-12):
        return False
    # a point on a shared face touches every adjacent cell
    candidates = [sorted({int(np.clip(np.floor(p - 1e-12), 0, n - 1)), int(np.clip(np.floor(p + 1e-12), 0, n - 1))})
                  for p, n in zip(position, shape)]
    return any(voxels.mask[i, j, k] for i in candidates[0] for j in candidates[1] for k in candidates[2])


def _volume_trace(source: SourceSpec, voxels: VoxelGrid, grid: TimeGrid) -> np.ndarray:
    centers = voxels.centers
    try:
        trace = np.stack([source.evaluate(centers, t) for t in grid.nodes], axis=1)
    except Exception as e:
        raise EffectiveMediumError("source evaluation failed", {'cause': str(e)})
    if not np.all(np.isfinite(trace)):
        raise EffectiveMediumError("source evaluation failed")
    return trace * voxels.mask.reshape(-1, 1)


# ==========================================
# VOLUME OPERATOR
# ==========================================

class VolumeOperator:
    """
    Discrete volume potential V_h on piecewise-constant histories.

        V_h[w]^k = s_0 w^k + K_0' * w^{k-1} + sum_{l=1}^{k-1} K_l * w^{k-l}

    K_l is cell volume times the exact time weight at the centre distance,
    s_l the equivalent-ball self weight (K_l carries it at the origin for
    l >= 1). The current-interval coupling between distinct cells, K_0', acts
    on the previous value so every step stays explicit; V_h[w]^0 = 0.

    Kernel spectra of the smallest lags and value spectra of the latest nodes
    are kept while they fit in the cache budget; the rest are rebuilt on demand.
    """

    def __init__(self, voxels: VoxelGrid, grid: TimeGrid, workers: Optional[int] = None,
                 budget_mb: Optional[int] = None):
        config = get_config()
        self.voxels = voxels
        self.grid = grid
        self.workers = workers if workers is not None else config.solver.workers
        self.shape = voxels.shape
        self.padded = tuple(2 * n for n in self.shape)
        self.mask = voxels.mask.ravel()

        self.self_weights = ball_lag_weights(equivalent_ball_radius(voxels.cell_volume), grid.dt, grid.n_steps)

        h = voxels.spacing
        offsets = [np.fft.fftfreq(m, 1.0 / m) * h[axis] for axis, m in enumerate(self.padded)]
        dx, dy, dz = np.meshgrid(*offsets, indexing='ij')
        self.distances = np.sqrt(dx * dx + dy * dy + dz * dz)
        self.distances[0, 0, 0] = 1.0

        self.spectrum_shape = self.padded[:-1] + (self.padded[-1] // 2 + 1,)
        budget_mb = budget_mb if budget_mb is not None else config.solver.lag_cache_mb
        spectrum_bytes = 16 * int(np.prod(self.spectrum_shape))
        # kernel and value spectra share the budget
        self.capacity = max(1, int(budget_mb * 1024 * 1024 // (2 * spectrum_bytes)))
        self.rebuilds = 0
        self._kernels: Dict[int, np.ndarray] = {
            lag: self._build(lag) for lag in range(min(self.capacity, grid.n_steps))
        }

    def _build(self, lag: int) -> np.ndarray:
        dt = self.grid.dt
        kernel = self.voxels.cell_volume * (cumulative_phi(self.distances, (lag + 1) * dt)
                                            - cumulative_phi(self.distances, lag * dt))
        kernel[0, 0, 0] = self.self_weights[lag] if lag > 0 else 0.0
        return fft.rfftn(kernel, s=self.padded, workers=self.workers)

    def kernel_spectrum(self, lag: int) -> np.ndarray:
        cached = self._kernels.get(lag)
        if cached is not None:
            return cached
        self.rebuilds += 1
        return self._build(lag)

    def spectrum(self, column: np.ndarray) -> np.ndarray:
        values = np.where(self.mask, column, 0.0).reshape(self.shape)
        return fft.rfftn(values, s=self.padded, workers=self.workers)

    def remember(self, spectra: Dict[int, np.ndarray], values: np.ndarray, node: int) -> None:
        """Cache the spectrum of column `node`, dropping the oldest beyond capacity"""
        spectra[node] = self.spectrum(values[:, node])
        spectra.pop(node - self.capacity, None)

    def _value_spectrum(self, spectra: Dict[int, np.ndarray], values: np.ndarray, node: int) -> np.ndarray:
        cached = spectra.get(node)
        return cached if cached is not None else self.spectrum(values[:, node])

    def _convolve(self, spectrum: np.ndarray) -> np.ndarray:
        full = fft.irfftn(spectrum, s=self.padded, workers=self.workers)
        window = full[:self.shape[0], :self.shape[1], :self.shape[2]]
        return np.where(self.mask, window.ravel(), 0.0)

    def memory(self, values: np.ndarray, k: int, spectra: Dict[int, np.ndarray]) -> np.ndarray:
        """V_h[w]^k without the s_0 w^k term, from w^0..w^{k-1}"""
        total = self.kernel_spectrum(0) * self._value_spectrum(spectra, values, k - 1)
        for lag in range(1, k):
            total += self.kernel_spectrum(lag) * self._value_spectrum(spectra, values, k - lag)
        return self._convolve(total)

    def apply(self, values: np.ndarray) -> np.ndarray:
        """V_h[w] for a full history, shape (cells, n_steps + 1)"""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.voxels.n_cells, self.grid.n_steps + 1):
            raise EffectiveMediumError("incompatible discretizations",
                                       {'values': values.shape, 'cells': self.voxels.n_cells})
        spectra: Dict[int, np.ndarray] = {}
        out = np.zeros_like(values)
        for k in range(1, self.grid.n_steps + 1):
            self.remember(spectra, values, k - 1)
            out[:, k] = self.self_weights[0] * values[:, k] * self.mask + self.memory(values, k, spectra)
        return out


# ==========================================
# VOLUME EQUATION
# ==========================================

def solve_v(omega_grid: VoxelGrid, c_bar: float, source: SourceSpec, grid: TimeGrid) -> VolumeDensityHistory:
    """
    March (I + c_bar V_h) v = f one step at a time.

    Each step is the explicit cell update
    (1 + c_bar s_0) v^k = f^k - c_bar (V_h[v]^k - s_0 v^k).

    Raises:
        EffectiveMediumError: "source inside effective domain" for a point
            source in the closure of an active cell
    """
    logger = get_logger()
    perf = get_performance_logger()

    c_bar = _check_c_bar(c_bar)
    if source.kind == SourceKind.POINT_SOURCE and _source_inside(omega_grid, source.z_star):
        raise EffectiveMediumError("source inside effective domain", {'z_star': source.z_star.tolist()})

    forcing = _volume_trace(source, omega_grid, grid)
    if c_bar == 0.0:
        return VolumeDensityHistory(grid, forcing, c_bar, omega_grid)

    perf.start_timing("solve_v")
    operator = VolumeOperator(omega_grid, grid)
    diagonal = 1.0 + c_bar * operator.self_weights[0]

    values = np.zeros_like(forcing)
    values[:, 0] = forcing[:, 0]
    spectra: Dict[int, np.ndarray] = {}
    operator.remember(spectra, values, 0)
    for k in range(1, grid.n_steps + 1):
        values[:, k] = (forcing[:, k] - c_bar * operator.memory(values, k, spectra)) / diagonal
        operator.remember(spectra, values, k)

    if not np.all(np.isfinite(values)):
        error = EffectiveMediumError("non-finite volume density")
        get_error_logger().log_solver_error("effective_medium", error, c_bar=c_bar)
        raise error

    elapsed = perf.end_timing("solve_v", cells=len(omega_grid.active), steps=grid.n_steps)
    logger.log_solver_event("effective_medium", "marched", cells=len(omega_grid.active),
                            steps=grid.n_steps, c_bar=c_bar, elapsed_ms=round(elapsed, 3))
    return VolumeDensityHistory(grid, values, c_bar, omega_grid)


def volume_potential(omega_grid: VoxelGrid, grid: TimeGrid, values: np.ndarray) -> np.ndarray:
    """V_h applied to a cells x nodes history"""
    return VolumeOperator(omega_grid, grid).apply(values)


def neumann_series_v(omega_grid: VoxelGrid, c_bar: float, source: SourceSpec, grid: TimeGrid,
                     order: int = 2) -> VolumeDensityHistory:
    """Truncated series sum_{j <= order} (-c_bar V_h)^j f"""
    c_bar = _check_c_bar(c_bar)
    if order < 0:
        raise EffectiveMediumError("series order must be nonnegative")
    forcing = _volume_trace(source, omega_grid, grid)
    operator = VolumeOperator(omega_grid, grid)
    term = forcing
    total = forcing.copy()
    for _ in range(order):
        term = -c_bar * operator.apply(term)
        total += term
    return VolumeDensityHistory(grid, total, c_bar, omega_grid)


def volume_residual(v_history: VolumeDensityHistory, source: SourceSpec) -> np.ndarray:
    """
    v + c_bar V_h[v] - f on the active cells, from dense direct sums.

    Shares no code path with the FFT march; intended for small grids.
    """
    voxels = v_history.voxels
    if voxels is None:
        raise EffectiveMediumError("incompatible discretizations")
    grid = v_history.grid
    active = voxels.active
    values = v_history.values[active]
    forcing = _volume_trace(source, voxels, grid)[active]

    distances = cdist(voxels.centers[active], voxels.centers[active])
    np.fill_diagonal(distances, 1.0)
    weights = voxels.cell_volume * lag_weights(distances, grid.dt, grid.n_steps)
    self_weights = ball_lag_weights(equivalent_ball_radius(voxels.cell_volume), grid.dt, grid.n_steps)
    for lag in range(grid.n_steps):
        np.fill_diagonal(weights[lag], self_weights[lag] if lag > 0 else 0.0)

    residual = values - forcing
    for k in range(1, grid.n_steps + 1):
        potential = self_weights[0] * values[:, k] + weights[0] @ values[:, k - 1]
        for lag in range(1, k):
            potential += weights[lag] @ values[:, k - lag]
        residual[:, k] += v_history.c_bar * potential
    return residual


# ==========================================
# HEAT POTENTIAL
# ==========================================

def _cell_potential(voxels: VoxelGrid, values: np.ndarray, cell: int, k: int, dt: float) -> float:
    """V_h[v]^k at one active cell by direct summation"""
    if k == 0:
        return 0.0
    active = voxels.active
    position = int(np.searchsorted(active, cell))
    distances = np.linalg.norm(voxels.centers[active] - voxels.centers[cell], axis=1)
    distances[position] = 1.0
    weights = voxels.cell_volume * lag_weights(distances, dt, k)
    self_weights = ball_lag_weights(equivalent_ball_radius(voxels.cell_volume), dt, k)
    weights[:, position] = self_weights
    weights[0, position] = 0.0

    history = values[active]
    total = self_weights[0] * history[position, k] + weights[0] @ history[:, k - 1]
    if k > 1:
        total += np.einsum('la,al->', weights[1:k], history[:, k - 1:0:-1])
    return float(total)


def _exterior_potential(voxels: VoxelGrid, values: np.ndarray, grid: TimeGrid, x: np.ndarray, t: float) -> float:
    """Exact time windows of every interval seen from (x, t), cell-centre rule in space"""
    active = voxels.active
    distances = np.linalg.norm(voxels.centers[active] - x, axis=1)
    nodes = grid.nodes
    s1 = np.maximum(t - nodes[:-1], 0.0)
    s0 = np.maximum(t - nodes[1:], 0.0)
    weights = cumulative_phi(distances[None, :], s1[:, None]) - cumulative_phi(distances[None, :], s0[:, None])
    return float(voxels.cell_volume * np.einsum('ma,am->', weights, values[active, 1:]))


def eval_W(omega_grid: VoxelGrid, c_bar: float, v_history: VolumeDensityHistory, x, t: float) -> float:
    """
    W(x, t) = int_0^t int_Omega c_bar Phi(x, t; z, tau) v(z, tau) dz dtau.

    At a cell centre W is c_bar V_h[v], linear in t between nodes. Outside the
    closure of the domain every interval gets its exact time window.

    Raises:
        EffectiveMediumError: "beyond simulated horizon", or
            "evaluation point inside effective domain" for other interior points
    """
    grid = v_history.grid
    x = np.asarray(x, dtype=float).reshape(3)
    c_bar = _check_c_bar(c_bar)
    if t > grid.T * (1.0 + HORIZON_SLACK):
        raise EffectiveMediumError("beyond simulated horizon", {'t': t, 'T': grid.T})
    if v_history.values.shape[0] != omega_grid.n_cells:
        raise EffectiveMediumError("incompatible discretizations")
    if t <= 0 or c_bar == 0.0:
        return 0.0

    cell = int(omega_grid.index_of(x[None, :])[0])
    if cell >= 0 and omega_grid.mask.ravel()[cell]:
        position = t / grid.dt
        lower = min(int(np.floor(position + 1e-9)), grid.n_steps)
        fraction = position - lower
        value = _cell_potential(omega_grid, v_history.values, cell, lower, grid.dt)
        if fraction > 1e-9 and lower < grid.n_steps:
            upper = _cell_potential(omega_grid, v_history.values, cell, lower + 1, grid.dt)
            value += fraction * (upper - value)
        return c_bar * value

    if _source_inside(omega_grid, x):
        raise EffectiveMediumError("evaluation point inside effective domain", {'x': x.tolist()})
    return c_bar * _exterior_potential(omega_grid, v_history.values, grid, x, t)


def eval_V(omega_grid: VoxelGrid, c_bar: float, source: SourceSpec, v_history: VolumeDensityHistory,
           x, t: float) -> float:
    """V = f - W"""
    x = np.asarray(x, dtype=float).reshape(3)
    incident = float(source.evaluate(x[None, :], t)[0]) if t > 0 else 0.0
    return incident - eval_W(omega_grid, c_bar, v_history, x, t)


def sample_W(omega_grid: VoxelGrid, c_bar: float, v_history: VolumeDensityHistory, points, times) -> list:
    """FieldSample records in (point, time) order"""
    return [
        FieldSample.at(p, t, eval_W(omega_grid, c_bar, v_history, p, t))
        for p in np.atleast_2d(points) for t in times
    ]


# ==========================================
# EFFECTIVE CONDUCTIVITY
# ==========================================

def _dirichlet_system(voxels: VoxelGrid, c_bar: float) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """
    7-point -lap + c_bar on the active cells.

    A face towards an inactive or outside cell uses the mirrored ghost
    2 - sigma, which places sigma = 1 on that face.
    """
    mask = voxels.mask
    shape = np.asarray(voxels.shape)
    numbering = np.full(voxels.shape, -1, dtype=np.int64)
    cells = np.argwhere(mask)
    numbering[tuple(cells.T)] = np.arange(len(cells))
    inv_h2 = 1.0 / np.square(voxels.spacing)

    diagonal = np.full(len(cells), c_bar)
    rhs = np.zeros(len(cells))
    rows, cols = [], []
    values = []
    for axis in range(3):
        for step in (-1, 1):
            neighbour = cells.copy()
            neighbour[:, axis] += step
            in_range = (neighbour[:, axis] >= 0) & (neighbour[:, axis] < shape[axis])
            index = np.full(len(cells), -1, dtype=np.int64)
            index[in_range] = numbering[tuple(neighbour[in_range].T)]
            interior = index >= 0

            diagonal += np.where(interior, inv_h2[axis], 2.0 * inv_h2[axis])
            rhs += np.where(interior, 0.0, 2.0 * inv_h2[axis])
            rows.append(np.flatnonzero(interior))
            cols.append(index[interior])
            values.append(np.full(interior.sum(), -inv_h2[axis]))

    n = len(cells)
    off_diagonal = sparse.csr_matrix(
        (np.concatenate(values), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return (off_diagonal + sparse.diags(diagonal)).tocsr(), rhs


def clip_to_maximum_principle(solution: np.ndarray, tolerance: float) -> Tuple[np.ndarray, float]:
    """
    Clip sigma to 1 and return the largest overshoot.

    An overshoot above the solver tolerance is logged as a warning.
    """
    solution = np.asarray(solution, dtype=float)
    overshoot = float(max(solution.max(initial=1.0) - 1.0, 0.0))
    if overshoot > tolerance:
        get_logger().warning(
            "sigma clipped to the maximum principle",
            overshoot=overshoot,
            tolerance=tolerance,
            cells=int(np.count_nonzero(solution > 1.0 + tolerance)),
        )
    return np.minimum(solution, 1.0), overshoot


def solve_sigma(omega_grid: VoxelGrid, c_bar: float) -> EffectiveCoefficients:
    """
    Conjugate gradients on -lap(sigma) + c_bar sigma = 0 with sigma = 1 on
    the boundary, started from sigma = 1.

    Returns:
        EffectiveCoefficients with sigma extended by 1 outside the mask and
        gamma = rho_c = sigma^2

    Raises:
        EffectiveMediumError: "elliptic solve failed" if CG does not converge
    """
    config = get_config()
    logger = get_logger()
    perf = get_performance_logger()
    c_bar = _check_c_bar(c_bar)

    perf.start_timing("solve_sigma")
    matrix, rhs = _dirichlet_system(omega_grid, c_bar)
    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution, info = cg(matrix, rhs, x0=np.ones(len(rhs)), rtol=config.solver.cg_rtol,
                        maxiter=config.solver.cg_max_iterations, callback=count)
    if info != 0 or not np.all(np.isfinite(solution)):
        error = EffectiveMediumError("elliptic solve failed", {'info': int(info), 'iterations': iterations})
        get_error_logger().log_solver_error("effective_medium", error, c_bar=c_bar)
        raise error

    residual = float(np.linalg.norm(rhs - matrix @ solution) / np.linalg.norm(rhs))
    solution, _ = clip_to_maximum_principle(solution, config.solver.cg_rtol)

    sigma = np.ones(omega_grid.shape)
    sigma[omega_grid.mask] = solution
    coefficients = EffectiveCoefficients(
        c_bar=c_bar,
        grid=omega_grid,
        sigma_field=sigma,
        gamma_field=np.square(sigma),
        rho_c_field=rho_c(sigma),
        iterations=iterations,
        residual=residual,
    )
    coefficients.validate()

    elapsed = perf.end_timing("solve_sigma", cells=len(rhs))
    logger.log_convergence("solve_sigma", iterations, residual, c_bar=c_bar, elapsed_ms=round(elapsed, 3))
    return coefficients


def rho_c(sigma_field: np.ndarray) -> np.ndarray:
    """Effective heat capacity rho * c = sigma^2"""
    return np.square(np.asarray(sigma_field, dtype=float))


# ==========================================
# CROSS-MODEL COMPARISON
# ==========================================

def compare_alpha_v(history: DensityHistory, v_history: VolumeDensityHistory, partition: OmegaPartition) -> float:
    """
    sum_j ||alpha_j - v(z_j, .)||^2 in L2(0, T) by trapezoid.

    Raises:
        EffectiveMediumError: "incompatible discretizations" unless both share
            the time grid and every partition centre is an active cell centre
    """
    voxels = v_history.voxels
    if voxels is None or history.grid != v_history.grid or history.M != partition.cell_count:
        raise EffectiveMediumError("incompatible discretizations")
    cells = voxels.index_of(partition.centers)
    if np.any(cells < 0) or not np.all(voxels.mask.ravel()[cells]):
        raise EffectiveMediumError("incompatible discretizations")

    difference = history.alphas - v_history.values[cells]
    return float(np.sum(integrate.trapezoid(np.square(difference), history.grid.nodes, axis=1)))
