"""
Result Records for HeatCluster
Field samples and convergence-study reports written by the output layer.
"""

from dataclasses import dataclass, field
from typing import List, Dict, Any, Optional

import numpy as np

from utils.errors import SimulationError


@dataclass(frozen=True)
class FieldSample:
    """One (x, t, u) record of a heat field"""

    x: float
    y: float
    z: float
    t: float
    u: float

    @classmethod
    def at(cls, point, t: float, u: float) -> 'FieldSample':
        return cls(float(point[0]), float(point[1]), float(point[2]), float(t), float(u))

    @property
    def point(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def to_row(self) -> List[float]:
        return [self.x, self.y, self.z, self.t, self.u]


@dataclass
class RateReport:
    """
    Log-log convergence fit of a study.

    `slope` and `half_width` are None when fewer than three levels were run.
    """

    kind: str
    levels: List[float]
    errors: List[float]
    slope: Optional[float] = None
    intercept: Optional[float] = None
    half_width: Optional[float] = None
    confidence: float = 0.95
    metadata: Dict[str, Any] = field(default_factory=dict)

    def validate(self) -> None:
        """
        Raises:
            SimulationError: If the report is internally inconsistent
        """
        if len(self.levels) != len(self.errors):
            raise SimulationError("levels and errors differ in length")
        if self.slope is not None and len(self.levels) < 3:
            raise SimulationError("a fitted slope needs at least three levels")

    @property
    def strictly_decreasing(self) -> bool:
        """Errors shrink level after level"""
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'levels': list(self.levels),
            'errors': list(self.errors),
            'slope': self.slope,
            'intercept': self.intercept,
            'half_width': self.half_width,
            'confidence': self.confidence,
            'strictly_decreasing': self.strictly_decreasing,
            'metadata': self.metadata,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'RateReport':
        return cls(
            kind=data['kind'],
            levels=list(data['levels']),
            errors=list(data['errors']),
            slope=data.get('slope'),
            intercept=data.get('intercept'),
            half_width=data.get('half_width'),
            confidence=data.get('confidence', 0.95),
            metadata=data.get('metadata', {}),
        )
