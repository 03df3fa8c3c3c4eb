"""
Rate Study Service for HeatCluster
Runs a matched pair of solvers at several refinement levels, measures the
difference at a fixed far observation point and fits the log-log slope.

Levels run concurrently in a thread pool; results are aggregated in level
order, so the report does not depend on scheduling.
"""

import asyncio
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats

from models.cluster import Box, ReferenceShape
from models.histories import SourceSpec, TimeGrid
from models.records import RateReport
from core.geometry import build_cluster, cavity_meshes, cluster_from_centers, triangulate
from core.laplace_bem import capacitance
from core.foldy_lax import eval_field, solve_alphas
from core.heat_bem_reference import (
    eval_reference_field, point_charge_field, solve_boundary_density, static_capacitance
)
from core.effective_medium import c_bar_from_reference, eval_W, solve_v, voxel_grid_for_partition
from utils.config import get_config
from utils.errors import SimulationError, StudyError
from utils.logger import get_logger, get_error_logger


class StudyKind(Enum):
    SINGLE_CAVITY_EPS2 = "single_cavity_eps2"
    MULTI_VS_ORACLE = "multi_vs_oracle"
    HOMOGENIZATION_A13 = "homogenization_a13"
    TIMESTEP_ORDER2 = "timestep_order2"


@dataclass
class StudyOptions:
    """
    Fixed parameters of a study; only the level varies.

    The observation point sits 2 diam(omega) from the centre of omega along x and is
    sampled at every fraction of T in `time_fractions`; a level's error is
    the largest difference over those times. With `ramp_rate` set the
    source is the spatially uniform f(t) = 1 - exp(-ramp_rate t) instead
    of the point source at z_star.
    """

    T: float = 1.0
    n_steps: int = 20
    refinement: int = 1
    omega: Box = field(default_factory=lambda: Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5)))
    z_star: Sequence[float] = (0.0, 0.0, -1.0)
    pair_centers: Sequence[Sequence[float]] = ((-0.25, 0.0, 0.0), (0.25, 0.0, 0.0))
    pair_eps: float = 0.1
    d0: float = 2.0
    voxel_refine: int = 1
    time_fractions: Sequence[float] = (0.5, 1.0)
    ramp_rate: Optional[float] = None

    @property
    def observation_point(self) -> np.ndarray:
        return self.omega.center + np.array([2.0 * self.omega.diameter, 0.0, 0.0])

    @property
    def times(self) -> List[float]:
        return [fraction * self.T for fraction in self.time_fractions]

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.n_steps)

    @property
    def source(self) -> SourceSpec:
        if self.ramp_rate is None:
            return SourceSpec.point(self.z_star)
        rate = self.ramp_rate
        return SourceSpec.smooth(lambda points, t: np.full(len(points), -math.expm1(-rate * t)))


DEFAULT_OPTIONS: Dict[StudyKind, StudyOptions] = {
    StudyKind.SINGLE_CAVITY_EPS2: StudyOptions(),
    StudyKind.MULTI_VS_ORACLE: StudyOptions(),
    StudyKind.HOMOGENIZATION_A13: StudyOptions(
        n_steps=200,
        omega=Box((0.0, 0.0, 0.0), (1.0, 1.0, 1.0)),
        z_star=(-0.5, 0.5, 0.5),
    ),
    # the point source vanishes to all orders at t = 0; the ramp has f'(0) != 0
    StudyKind.TIMESTEP_ORDER2: StudyOptions(ramp_rate=4.0),
}


# ==========================================
# LEVEL RUNNERS
# ==========================================

def _single_cavity_error(eps: float, options: StudyOptions) -> float:
    """
    max_t |u_ref - C eps int Phi(x; z) Phi(z; z*)| for one sphere at the centre.

    The leading term uses the oracle's own quasi-static capacitance and time
    windows, so mesh and time-step errors cancel at first order.
    """
    reference = triangulate(ReferenceShape.unit_sphere(), options.refinement)
    center = options.omega.center
    cluster = cluster_from_centers([center], eps)
    grid, source = options.grid, options.source

    density = solve_boundary_density(cluster, cavity_meshes(cluster, reference), source, grid)
    trace = np.stack([source.evaluate(center[None, :], t) for t in grid.nodes], axis=1)
    charges = eps * static_capacitance(reference) * trace
    return max(
        abs(eval_reference_field(density, options.observation_point, t)
            - point_charge_field(center[None, :], charges, grid, options.observation_point, t))
        for t in options.times
    )


def _pair_cluster(eps: float, options: StudyOptions):
    return cluster_from_centers(np.asarray(options.pair_centers, dtype=float), eps)


def _multi_vs_oracle_error(eps: float, options: StudyOptions) -> float:
    """max_t |u_ref - u_flsim| for the sphere pair at scale eps"""
    reference = triangulate(ReferenceShape.unit_sphere(), options.refinement)
    cluster = _pair_cluster(eps, options)
    grid, source = options.grid, options.source

    density = solve_boundary_density(cluster, cavity_meshes(cluster, reference), source, grid)
    caps = [eps * static_capacitance(reference)] * cluster.M
    history = solve_alphas(cluster, caps, source, grid)
    return max(
        abs(eval_reference_field(density, options.observation_point, t) - eval_field(cluster, caps, history, options.observation_point, t))
        for t in options.times
    )


def _homogenization_error(a: float, options: StudyOptions) -> float:
    """max_t |u_flsim - W| on the lattice of cavities of size a"""
    shape = ReferenceShape.unit_sphere()
    cluster, partition = build_cluster(options.omega, a, options.d0, shape)
    cap_B, _ = capacitance(triangulate(shape, options.refinement))
    grid, source = options.grid, options.source

    caps = [cap_B.scaled(cluster.eps)] * cluster.M
    history = solve_alphas(cluster, caps, source, grid)

    c_bar = c_bar_from_reference(cap_B.value, shape.diameter)
    voxels = voxel_grid_for_partition(partition, options.voxel_refine)
    v_history = solve_v(voxels, c_bar, source, grid)
    return max(
        abs(eval_field(cluster, caps, history, options.observation_point, t) - eval_W(voxels, c_bar, v_history, options.observation_point, t))
        for t in options.times
    )


def _pair_field(n_steps: int, options: StudyOptions) -> np.ndarray:
    """Pair field at every observation time"""
    cluster = _pair_cluster(options.pair_eps, options)
    caps = [4.0 * math.pi * cluster.eps] * cluster.M
    grid = TimeGrid(options.T, n_steps)
    history = solve_alphas(cluster, caps, options.source, grid)
    return np.array([eval_field(cluster, caps, history, options.observation_point, t) for t in options.times])


LEVEL_RUNNERS: Dict[StudyKind, Callable[[float, StudyOptions], float]] = {
    StudyKind.SINGLE_CAVITY_EPS2: _single_cavity_error,
    StudyKind.MULTI_VS_ORACLE: _multi_vs_oracle_error,
    StudyKind.HOMOGENIZATION_A13: _homogenization_error,
}


# ==========================================
# FITTING
# ==========================================

def fit_rate(levels: Sequence[float], errors: Sequence[float], kind: str = "custom",
             confidence: float = 0.95, metadata: Optional[Dict] = None) -> RateReport:
    """
    Unweighted least-squares slope of log(error) against log(level).

    The half-width is the Student-t quantile times the slope's standard
    error; with fewer than three levels no slope is fitted.

    Raises:
        SimulationError: For nonpositive levels or errors
    """
    levels = [float(v) for v in levels]
    errors = [float(e) for e in errors]
    report = RateReport(kind, levels, errors, confidence=confidence, metadata=dict(metadata or {}))
    if len(levels) < 3:
        report.validate()
        return report
    if min(levels) <= 0 or min(errors) <= 0:
        raise SimulationError("rates need positive levels and errors", {'errors': errors})

    fit = stats.linregress(np.log(levels), np.log(errors))
    quantile = stats.t.ppf(0.5 + 0.5 * confidence, len(levels) - 2)
    report.slope = float(fit.slope)
    report.intercept = float(fit.intercept)
    report.half_width = float(quantile * fit.stderr)
    report.validate()
    return report


# ==========================================
# STUDIES
# ==========================================

class RateStudyService:
    """Convergence studies backing the error-rate claims"""

    def __init__(self):
        self.config = get_config()
        self.logger = get_logger()

    async def rate_study(self, kind: StudyKind, levels: Sequence[float],
                         options: Optional[StudyOptions] = None) -> RateReport:
        """
        Run every level of a study and fit the rate.

        timestep_order2 levels are step counts; its error is measured against
        the Richardson value (4 u(2N) - u(N)) / 3 at the finest count N, and
        the report's levels are the step sizes T / n.

        Raises:
            StudyError: Naming the first failing level (in level order)
        """
        kind = StudyKind(kind)
        options = options or DEFAULT_OPTIONS[kind]
        levels = list(levels)
        if len(levels) < 3:
            raise SimulationError("a rate study needs at least three levels", {'levels': levels})

        if kind == StudyKind.TIMESTEP_ORDER2:
            steps = [int(n) for n in levels]
            finest = max(steps)
            values = await self._run_levels(_pair_field, steps + [2 * finest], options)
            by_steps = dict(zip(steps + [2 * finest], values))
            richardson = (4.0 * by_steps[2 * finest] - by_steps[finest]) / 3.0
            errors = [float(np.max(np.abs(by_steps[n] - richardson))) for n in steps]
            report_levels = [options.T / n for n in steps]
        else:
            errors = [float(e) for e in await self._run_levels(LEVEL_RUNNERS[kind], levels, options)]
            report_levels = levels

        for level, error in zip(report_levels, errors):
            self.logger.log_convergence(kind.value, level, error)

        report = fit_rate(report_levels, errors, kind.value, metadata={
            'observation_point': options.observation_point.tolist(),
            'times': options.times,
            'source': 'ramp' if options.ramp_rate is not None else 'point',
            'n_steps': options.n_steps,
        })
        self.logger.info("Rate study finished", kind=kind.value, slope=report.slope,
                         half_width=report.half_width)
        return report

    async def _run_levels(self, runner: Callable, levels: List, options: StudyOptions) -> List:
        loop = asyncio.get_running_loop()
        with ThreadPoolExecutor(max_workers=self.config.solver.workers) as executor:
            tasks = [loop.run_in_executor(executor, runner, level, options) for level in levels]
            results = await asyncio.gather(*tasks, return_exceptions=True)

        for level, result in zip(levels, results):
            if isinstance(result, BaseException):
                error = StudyError(level, result)
                get_error_logger().log_solver_error("rate_study", error, level=level)
                raise error from result
        return list(results)


# Global rate study service instance
_rate_study_service: Optional[RateStudyService] = None


def get_rate_study_service() -> RateStudyService:
    """Get the global rate study service"""
    global _rate_study_service
    if _rate_study_service is None:
        _rate_study_service = RateStudyService()
    return _rate_study_service


async def rate_study(kind, levels: Sequence[float], options: Optional[StudyOptions] = None) -> RateReport:
    return await get_rate_study_service().rate_study(kind, levels, options)


def run_rate_study(kind, levels: Sequence[float], options: Optional[StudyOptions] = None) -> RateReport:
    """Blocking wrapper for callers outside an event loop"""
    return asyncio.run(rate_study(kind, levels, options))
