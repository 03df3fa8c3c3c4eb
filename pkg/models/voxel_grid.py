"""
Voxel Grid Models for HeatCluster
Cell decomposition of the effective domain and the coefficient fields
derived on it.
"""

from dataclasses import dataclass, field
from typing import Optional, Dict, Any, Tuple

import numpy as np

from .cluster import Box
from utils.errors import EffectiveMediumError


@dataclass
class VoxelGrid:
    """
    Uniform cell-centred grid on a box.

    An optional boolean mask selects the cells of a general domain; masked-out
    cells carry no unknowns. Flattened arrays use C order (x slowest).
    """

    omega: Box
    shape: Tuple[int, int, int]
    mask: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.shape = tuple(int(n) for n in self.shape)
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise EffectiveMediumError("voxel grid needs three positive cell counts")
        if self.mask is None:
            self.mask = np.ones(self.shape, dtype=bool)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.shape:
            raise EffectiveMediumError("mask shape does not match the grid")
        if not self.mask.any():
            raise EffectiveMediumError("mask selects no cells")
        self.mask.setflags(write=False)

    @classmethod
    def cube(cls, omega: Box, n: int, mask: Optional[np.ndarray] = None) -> 'VoxelGrid':
        return cls(omega, (n, n, n), mask)

    @property
    def spacing(self) -> np.ndarray:
        return self.omega.extent / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.shape))

    @property
    def axes(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        lower = np.asarray(self.omega.lower)
        h = self.spacing
        return tuple(lower[k] + (np.arange(self.shape[k]) + 0.5) * h[k] for k in range(3))

    @property
    def centers(self) -> np.ndarray:
        """All cell centres, shape (n_cells, 3)"""
        grid = np.meshgrid(*self.axes, indexing='ij')
        return np.stack([g.ravel() for g in grid], axis=1)

    @property
    def active(self) -> np.ndarray:
        """Flat indices of the cells inside the domain"""
        return np.flatnonzero(self.mask.ravel())

    @property
    def is_full_box(self) -> bool:
        return bool(self.mask.all())

    def index_of(self, points: np.ndarray, atol: float = 1e-9) -> np.ndarray:
        """
        Flat index of the cell whose centre coincides with each point, -1 if none.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        lower = np.asarray(self.omega.lower)
        h = self.spacing
        fractional = (points - lower) / h - 0.5
        ijk = np.rint(fractional).astype(np.int64)
        on_center = np.all(np.abs(fractional - ijk) * h <= atol * max(1.0, self.omega.diameter), axis=1)
        in_range = np.all((ijk >= 0) & (ijk < np.asarray(self.shape)), axis=1)
        flat = np.ravel_multi_index(np.clip(ijk, 0, np.asarray(self.shape) - 1).T, self.shape)
        return np.where(on_center & in_range, flat, -1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'omega': self.omega.to_dict(),
            'shape': list(self.shape),
            'masked': not self.is_full_box,
        }


@dataclass
class EffectiveCoefficients:
    """
    Solution of -lap(sigma) + c_bar * sigma = 0, sigma = 1 on the boundary.

    Fields are full grid arrays; cells outside the mask hold the extension
    value 1.
    """

    c_bar: float
    grid: VoxelGrid
    sigma_field: np.ndarray
    gamma_field: np.ndarray
    rho_c_field: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def __post_init__(self):
        if self.c_bar < 0:
            raise EffectiveMediumError("c_bar must be nonnegative")
        for name in ('sigma_field', 'gamma_field', 'rho_c_field'):
            value = np.asarray(getattr(self, name), dtype=float)
            value.setflags(write=False)
            setattr(self, name, value)

    def validate(self) -> None:
        """
        Raises:
            EffectiveMediumError: If sigma leaves (0, 1] or gamma != sigma^2
        """
        if np.any(self.sigma_field <= 0) or np.any(self.sigma_field > 1.0):
            raise EffectiveMediumError("sigma outside (0, 1]")
        if not np.array_equal(self.gamma_field, np.square(self.sigma_field)):
            raise EffectiveMediumError("gamma differs from sigma squared")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'c_bar': self.c_bar,
            'grid': self.grid.to_dict(),
            'sigma_min': float(self.sigma_field.min()),
            'sigma_max': float(self.sigma_field.max()),
            'iterations': self.iterations,
            'residual': self.residual,
        }
