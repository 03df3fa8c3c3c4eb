"""
Error hierarchy for HeatCluster.

Every solver raises a subclass of SimulationError whose message is the short,
stable text callers and tests match on (e.g. "degenerate distance").
"""

from typing import Any, Dict, Optional


class SimulationError(Exception):
    """Base exception for all simulation failures"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def __str__(self) -> str:
        return self.message


class KernelError(SimulationError):
    """Invalid arguments to a heat-kernel evaluation"""
    pass


class GeometryError(SimulationError):
    """Invalid mesh, shape or cluster"""
    pass


class CapacitanceError(SimulationError):
    """Failure of the harmonic capacitance solve"""
    pass


class FoldyLaxError(SimulationError):
    """Failure of the point-interaction march or field evaluation"""
    pass


class ReferenceSolverError(SimulationError):
    """Failure of the space-time boundary-integral oracle"""
    pass


class EffectiveMediumError(SimulationError):
    """Failure of the volume equation or the elliptic solve"""
    pass


class ConfigError(SimulationError):
    """Schema violation in an experiment configuration"""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}", {'path': path})
        self.path = path
        self.reason = message


class StudyError(SimulationError):
    """A convergence study sub-run failed"""

    def __init__(self, level: Any, cause: Exception):
        super().__init__(f"level {level} failed: {cause}", {'level': level})
        self.level = level
        self.cause = cause
