"""
Point-Interaction Solver for HeatCluster
Marches the coupled Volterra system

    alpha_i(t) + sum_{j != i} C_j int_0^t Phi(z_i, t; z_j, tau) alpha_j(tau) dtau = f(z_i, t)

with the composite trapezoidal rule and evaluates the resulting heat field.
"""

from typing import NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate

from models.cluster import Cluster
from models.histories import DensityHistory, SourceKind, SourceSpec, TimeGrid
from models.records import FieldSample
from core.heat_kernel import phi_many, kernel_l2_norm
from utils.errors import FoldyLaxError
from utils.logger import get_logger, get_performance_logger, get_error_logger


CapacitanceLike = Union[float, object]

# tolerance when comparing an evaluation time with the horizon
HORIZON_SLACK = 1e-12


class SolvabilityCheck(NamedTuple):
    holds: bool
    value: float
    stability_factor: float


def capacitance_values(caps: Sequence[CapacitanceLike], M: int) -> np.ndarray:
    """Plain array of capacitances from floats or Capacitance objects"""
    values = np.array([float(getattr(c, 'value', c)) for c in caps], dtype=float)
    if values.shape != (M,):
        raise FoldyLaxError("one capacitance per cavity required", {'given': len(values), 'M': M})
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise FoldyLaxError("capacitances must be nonnegative")
    return values


def _center_distances(cluster: Cluster) -> np.ndarray:
    distances = cluster.center_distances()
    off_diagonal = ~np.eye(cluster.M, dtype=bool)
    if np.any(distances[off_diagonal] == 0.0):
        raise FoldyLaxError("singular interaction kernel")
    return distances


def interaction_kernel(cluster: Cluster, caps: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """
    K[l, i, j] = C_j Phi(z_i, l dt; z_j, 0) with zero diagonal, l = 0..n_steps.

    K[0] vanishes because the kernel is zero at equal times for distinct centres.
    """
    distances = _center_distances(cluster)
    lags = grid.nodes.reshape(-1, 1, 1)
    kernel = phi_many(distances[None, :, :], lags) * caps[None, None, :]
    kernel[:, np.arange(cluster.M), np.arange(cluster.M)] = 0.0
    return kernel


def source_trace(source: SourceSpec, points: np.ndarray, grid: TimeGrid) -> np.ndarray:
    """
    f(points, t_k) for every node, shape (N, n_steps + 1).

    Raises:
        FoldyLaxError: "source evaluation failed" on exceptions or non-finite values
    """
    try:
        trace = np.stack([source.evaluate(points, t) for t in grid.nodes], axis=1)
    except FoldyLaxError:
        raise
    except Exception as e:
        raise FoldyLaxError("source evaluation failed", {'cause': str(e)})
    if not np.all(np.isfinite(trace)):
        raise FoldyLaxError("source evaluation failed")
    return trace


# ==========================================
# SOLVABILITY
# ==========================================

def check_solvability(cluster: Cluster, caps: Sequence[CapacitanceLike]) -> SolvabilityCheck:
    """
    C * max_i sum_{j != i} |z_i - z_j|^(-2) with C = max_j C_j.

    Returns:
        (holds, value, stability_factor) where the factor is 1 / (1 - value),
        infinite when the condition fails
    """
    C = capacitance_values(caps, cluster.M)
    if cluster.M == 1:
        return SolvabilityCheck(True, 0.0, 1.0)

    distances = _center_distances(cluster)
    np.fill_diagonal(distances, np.inf)
    value = float(C.max() * np.max(np.sum(distances ** -2.0, axis=1)))
    holds = value < 1.0
    factor = 1.0 / (1.0 - value) if holds else float('inf')
    get_logger().log_condition_check("solvability", value, holds, M=cluster.M)
    return SolvabilityCheck(holds, value, factor)


# ==========================================
# MARCH
# ==========================================

def trapezoid_weights(k: int, dt: float) -> np.ndarray:
    """Composite trapezoid weights on t_0..t_{k-1} (the t_k term carries a zero kernel)"""
    weights = np.full(k, dt)
    weights[0] = 0.5 * dt
    return weights


def solve_alphas(cluster: Cluster, caps: Sequence[CapacitanceLike], source: SourceSpec,
                 grid: TimeGrid) -> DensityHistory:
    """
    Explicit trapezoidal march for the interaction densities.

    alpha_i(t_k) = f_i(t_k) - sum_{j != i} C_j sum_{m < k} w_m Phi(z_i, t_k; z_j, t_m) alpha_j(t_m)

    Raises:
        FoldyLaxError: "singular interaction kernel" for coincident centres,
            "source inside a cavity" for a point source in some closed cavity,
            "source evaluation failed" for a non-finite source trace
    """
    logger = get_logger()
    perf = get_performance_logger()

    if source.kind == SourceKind.POINT_SOURCE and cluster.contains(source.z_star[None, :])[0]:
        error = FoldyLaxError("source inside a cavity", {'z_star': source.z_star.tolist()})
        get_error_logger().log_solver_error("foldy_lax", error, M=cluster.M)
        raise error

    C = capacitance_values(caps, cluster.M)
    kernel = interaction_kernel(cluster, C, grid)
    # sufficient, not necessary: a failure only warns
    check_solvability(cluster, C)
    forcing = source_trace(source, cluster.centers, grid)

    perf.start_timing("solve_alphas")
    alphas = np.zeros_like(forcing)
    alphas[:, 0] = forcing[:, 0]
    for k in range(1, grid.n_steps + 1):
        weights = trapezoid_weights(k, grid.dt)
        # lags k, k-1, ..., 1 pair with nodes m = 0, ..., k-1
        memory = np.einsum('mij,jm,m->i', kernel[k:0:-1], alphas[:, :k], weights)
        alphas[:, k] = forcing[:, k] - memory

    if not np.all(np.isfinite(alphas)):
        error = FoldyLaxError("non-finite density history")
        get_error_logger().log_solver_error("foldy_lax", error, M=cluster.M)
        raise error

    elapsed = perf.end_timing("solve_alphas", M=cluster.M, steps=grid.n_steps)
    logger.log_solver_event("foldy_lax", "marched", M=cluster.M, steps=grid.n_steps,
                            elapsed_ms=round(elapsed, 3))
    return DensityHistory(grid, alphas)


# ==========================================
# FIELD
# ==========================================

def _quadrature_nodes(grid: TimeGrid, t: float) -> np.ndarray:
    nodes = grid.nodes
    inside = nodes[nodes < t]
    return np.append(inside, t)


def eval_field(cluster: Cluster, caps: Sequence[CapacitanceLike], history: DensityHistory,
               x, t: float) -> float:
    """
    u(x, t) = sum_i C_i int_0^t Phi(x, t; z_i, tau) alpha_i(tau) dtau by trapezoid.

    Off-grid t adds a partial last interval with alpha interpolated linearly.

    Raises:
        FoldyLaxError: "evaluation point inside cavity", or "beyond simulated horizon"
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if cluster.contains(x[None, :])[0]:
        raise FoldyLaxError("evaluation point inside cavity", {'x': x.tolist()})
    if t > history.grid.T * (1.0 + HORIZON_SLACK):
        raise FoldyLaxError("beyond simulated horizon", {'t': t, 'T': history.grid.T})
    if t <= 0:
        return 0.0

    C = capacitance_values(caps, cluster.M)
    taus = _quadrature_nodes(history.grid, t)
    alphas = np.stack([np.interp(taus, history.grid.nodes, row) for row in history.alphas])
    distances = np.linalg.norm(cluster.centers - x, axis=1)
    kernel = phi_many(distances[:, None], t - taus[None, :])
    integrand = np.sum(C[:, None] * kernel * alphas, axis=0)
    return float(integrate.trapezoid(integrand, taus))


def sample_field(cluster: Cluster, caps, history: DensityHistory, points, times) -> list:
    """FieldSample records in (point, time) order"""
    return [
        FieldSample.at(p, t, eval_field(cluster, caps, history, p, t))
        for p in np.atleast_2d(points) for t in times
    ]


def asymptotic_single_field(c0: float, z, z_star, x, t: float, grid: Optional[TimeGrid] = None,
                            tolerance: float = 1e-10) -> float:
    """
    Single-cavity expansion C0 int_0^t Phi(x, t; z, tau) Phi(z, tau; z*, 0) dtau.

    With a grid the integral uses the same trapezoid as eval_field; without one
    it is computed by adaptive quadrature.
    """
    z = np.asarray(z, dtype=float)
    r_x = float(np.linalg.norm(np.asarray(x, dtype=float) - z))
    r_s = float(np.linalg.norm(z - np.asarray(z_star, dtype=float)))
    if t <= 0:
        return 0.0

    if grid is not None:
        taus = _quadrature_nodes(grid, t)
        values = phi_many(r_x, t - taus) * phi_many(r_s, taus)
        return float(c0 * integrate.trapezoid(values, taus))

    def integrand(tau: float) -> float:
        return float(phi_many(r_x, t - tau) * phi_many(r_s, tau))

    value, _ = integrate.quad(integrand, 0.0, t, epsabs=0.0, epsrel=tolerance, limit=200)
    return c0 * value


# ==========================================
# CONSISTENCY CHECKS
# ==========================================

def discrete_residual(cluster: Cluster, caps: Sequence[CapacitanceLike], source: SourceSpec,
                      history: DensityHistory) -> np.ndarray:
    """
    Residual of the trapezoid-discretized system at every (cavity, node).

    Rebuilds each memory integral with scipy's trapezoid over t_0..t_k, so it
    shares no code path with the march.
    """
    C = capacitance_values(caps, cluster.M)
    grid = history.grid
    nodes = grid.nodes
    forcing = source_trace(source, cluster.centers, grid)
    residual = np.zeros_like(forcing)

    for i in range(cluster.M):
        for k in range(grid.n_steps + 1):
            memory = 0.0
            for j in range(cluster.M):
                if j == i or k == 0:
                    continue
                r = float(np.linalg.norm(cluster.centers[i] - cluster.centers[j]))
                values = phi_many(r, nodes[k] - nodes[:k + 1]) * history.alphas[j, :k + 1]
                memory += C[j] * integrate.trapezoid(values, nodes[:k + 1])
            residual[i, k] = history.alphas[i, k] + memory - forcing[i, k]
    return residual


def l2_norm(history_rows: np.ndarray, grid: TimeGrid) -> float:
    """(sum_i ||row_i||^2_{L2(0, T)})^(1/2) by trapezoid"""
    squares = integrate.trapezoid(np.square(history_rows), grid.nodes, axis=1)
    return float(np.sqrt(np.sum(squares)))


def stability_check(history: DensityHistory, source: SourceSpec, cluster: Cluster,
                    caps: Sequence[CapacitanceLike]) -> Tuple[float, float]:
    """
    Both sides of ||alpha|| <= (1 - value)^(-1) ||f|| in L2(0, T).

    The right side is infinite when the solvability condition fails.
    """
    check = check_solvability(cluster, caps)
    forcing = source_trace(source, cluster.centers, history.grid)
    lhs = l2_norm(history.alphas, history.grid)
    rhs = check.stability_factor * l2_norm(forcing, history.grid)
    return lhs, rhs


def kernel_estimate(cluster: Cluster, horizon: float) -> np.ndarray:
    """
    L2 magnitude of the pair kernels scaled by d_ij^2.

    Bounded entries confirm the kernel behaves like |z_i - z_j|^(-2).
    """
    distances = _center_distances(cluster)
    estimates = np.zeros_like(distances)
    for i in range(cluster.M):
        for j in range(cluster.M):
            if i != j:
                r = distances[i, j]
                estimates[i, j] = kernel_l2_norm(r, horizon) * r * r
    return estimates
