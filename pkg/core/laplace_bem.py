"""
Capacitance Solver for HeatCluster
Centroid-collocation boundary elements for the harmonic single layer
S[sigma] = 1 on a closed surface, with exact flat-triangle 1/r integrals.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple, Dict, Any

import numpy as np
from scipy import linalg

from models.mesh import TriMesh, solid_angle
from utils.config import get_config
from utils.errors import CapacitanceError, GeometryError
from utils.logger import get_logger, get_performance_logger, get_error_logger


FOUR_PI = 4.0 * math.pi

# relative to edge length squared, so the integrals stay dilation covariant
LOG_REGULARIZATION = 1e-13


@dataclass
class PanelDensity:
    """Piecewise-constant surface density, one value per panel"""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.n_panels,):
            raise CapacitanceError("density length differs from panel count")
        if not np.all(np.isfinite(self.values)):
            raise CapacitanceError("non-finite density")
        self.values.setflags(write=False)

    @property
    def total_charge(self) -> float:
        return float(np.dot(self.values, self.mesh.areas))


@dataclass(frozen=True)
class Capacitance:
    """Newtonian capacitance C = integral of the equilibrium density"""

    value: float

    def __post_init__(self):
        if not self.value > 0:
            raise CapacitanceError("capacitance must be positive", {'value': self.value})

    def scaled(self, eps: float) -> 'Capacitance':
        """Capacitance of the dilated shape eps * B"""
        return Capacitance(self.value * eps)

    def __float__(self) -> float:
        return self.value

    def to_dict(self) -> Dict[str, Any]:
        return {'value': self.value}


# ==========================================
# FLAT-TRIANGLE INTEGRALS
# ==========================================

def triangle_potential(R: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """
    Exact integral of 1/|x - y| over flat triangles.

    Edge decomposition: sum_i gamma_i n.(R_prev x R_next) - (n.R_0) * Omega,
    with gamma_i the line integral of 1/r along the edge opposite vertex i
    and Omega the signed solid angle.

    Args:
        R: Corner offsets y_v - x, shape (N, F, 3, 3)
        normals: Unit panel normals, shape (F, 3)

    Returns:
        Array of shape (N, F)
    """
    prev = np.roll(R, 1, axis=-2)
    nxt = np.roll(R, 2, axis=-2)
    edges = prev - nxt
    edge_lengths = np.linalg.norm(edges, axis=-1)
    distances = np.linalg.norm(R, axis=-1)
    dist_prev = np.roll(distances, 1, axis=-1)
    dist_next = np.roll(distances, 2, axis=-1)
    dot_prev = np.einsum('...i,...i->...', prev, edges)
    dot_next = np.einsum('...i,...i->...', nxt, edges)

    reg = LOG_REGULARIZATION * np.square(edge_lengths)
    with np.errstate(divide='ignore', invalid='ignore'):
        forward = np.log((dist_next * edge_lengths + dot_next + reg)
                         / (dist_prev * edge_lengths + dot_prev + reg))
        # the mirrored form is stable on the backward extension of the edge
        backward = -np.log((dist_next * edge_lengths - dot_next + reg)
                           / (dist_prev * edge_lengths - dot_prev + reg))
    gamma = np.where(dot_prev + dot_next > 0, forward, backward) / edge_lengths

    n = normals[None, :, None, :]
    summands = gamma * np.einsum('...i,...i->...', n, np.cross(prev, nxt))
    height = np.einsum('...i,...i->...', R[..., 0, :], normals[None, :, :])
    return summands.sum(axis=-1) - height * solid_angle(R)


def _check_panels(mesh: TriMesh) -> None:
    scale = max(float(mesh.panel_diameters.max()), np.finfo(float).tiny)
    if np.any(mesh.areas <= 1e-14 * scale * scale):
        bad = int(np.argmin(mesh.areas))
        raise CapacitanceError("degenerate panel", {'panel': bad})


def _potential_rows(mesh: TriMesh, points: np.ndarray) -> np.ndarray:
    R = mesh.corners[None, :, :, :] - points[:, None, None, :]
    return triangle_potential(R, mesh.normals) / FOUR_PI


def _blocks(n: int, size: int):
    return [slice(start, min(start + size, n)) for start in range(0, n, size)]


def single_layer_matrix(mesh: TriMesh, points: np.ndarray,
                        block_rows: Optional[int] = None, workers: Optional[int] = None) -> np.ndarray:
    """
    Matrix of integral over panel q of 1/(4 pi |x_p - y|) for arbitrary points.

    Rows are assembled in blocks on a thread pool; ordered map keeps the
    result identical to a serial loop.
    """
    config = get_config()
    block_rows = block_rows or config.solver.assembly_block_rows
    workers = workers or config.solver.workers
    points = np.atleast_2d(np.asarray(points, dtype=float))

    blocks = _blocks(len(points), block_rows)
    if workers <= 1 or len(blocks) == 1:
        parts = [_potential_rows(mesh, points[b]) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(lambda b: _potential_rows(mesh, points[b]), blocks))
    return np.vstack(parts)


# ==========================================
# OPERATIONS
# ==========================================

def assemble_single_layer(mesh: TriMesh) -> np.ndarray:
    """
    Collocation matrix of the harmonic single layer at panel centroids.

    Raises:
        CapacitanceError: "degenerate panel" if a panel has zero area
    """
    _check_panels(mesh)
    perf = get_performance_logger()
    perf.start_timing("assemble_single_layer")
    matrix = single_layer_matrix(mesh, mesh.centroids)
    perf.end_timing("assemble_single_layer", panels=mesh.n_panels)
    return matrix


def solve_dense(matrix: np.ndarray, rhs: np.ndarray, failure: str, error_cls=CapacitanceError) -> np.ndarray:
    """
    LU solve that turns singular or ill-conditioned systems into error_cls(failure).
    """
    with warnings.catch_warnings():
        warnings.simplefilter('error', linalg.LinAlgWarning)
        try:
            solution = linalg.solve(matrix, rhs, check_finite=True)
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as e:
            raise error_cls(failure, {'cause': str(e)})
    if not np.all(np.isfinite(solution)):
        raise error_cls(failure)
    return solution


def capacitance(mesh: TriMesh) -> Tuple[Capacitance, PanelDensity]:
    """
    Equilibrium density with unit surface potential and its total charge.

    Returns:
        (Capacitance, PanelDensity)

    Raises:
        GeometryError: "open surface" for a mesh with boundary edges
        CapacitanceError: "ill-conditioned capacitance system" on a singular solve
    """
    logger = get_logger()
    if not mesh.is_closed():
        raise GeometryError("open surface")

    matrix = assemble_single_layer(mesh)
    try:
        values = solve_dense(matrix, np.ones(mesh.n_panels), "ill-conditioned capacitance system")
    except CapacitanceError as e:
        get_error_logger().log_solver_error("capacitance", e, panels=mesh.n_panels)
        raise

    density = PanelDensity(mesh, values)
    value = density.total_charge
    logger.log_solver_event("capacitance", "solved", panels=mesh.n_panels, C=value)
    if np.any(values <= 0):
        logger.warning("Equilibrium density has nonpositive panels",
                       count=int(np.sum(values <= 0)))
    return Capacitance(value), density


def single_layer_potential(mesh: TriMesh, density: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Harmonic single layer of a piecewise-constant density at arbitrary points"""
    _check_panels(mesh)
    density = np.asarray(density, dtype=float)
    return single_layer_matrix(mesh, points) @ density
