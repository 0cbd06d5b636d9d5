#!/usr/bin/env python3
"""
Uniform 1-D grids with a node pinned at the junction, grid functions and
time-slice stacks shared by the dynamic programming and PDE solvers.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from solver_errors import ConfigurationError, GridMismatchError

logger = logging.getLogger(__name__)

JUNCTION_TOL = 1e-12


class UniformGrid:
    """
    Nodes x_min + i*dx on [x_min, x_max] with 0 exactly on a node.

    Args:
        x_min: Left end (<= 0; equal to 0 for half-line problems)
        x_max: Right end (> 0)
        dx: Spacing
    """

    def __init__(self, x_min: float, x_max: float, dx: float):
        if dx <= 0:
            raise ConfigurationError(f"dx must be positive, got {dx}")
        if not (x_min <= 0.0 < x_max):
            raise ConfigurationError(f"window [{x_min}, {x_max}] must contain the junction")
        left = -x_min / dx
        right = x_max / dx
        if abs(left - round(left)) > 1e-9 or abs(right - round(right)) > 1e-9:
            raise ConfigurationError(f"window ends must be multiples of dx={dx}")
        self.dx = float(dx)
        self.n_left = int(round(left))
        self.n_right = int(round(right))
        self.nodes = (np.arange(-self.n_left, self.n_right + 1)) * self.dx
        self.junction = self.n_left
        if abs(self.nodes[self.junction]) > JUNCTION_TOL:
            raise ConfigurationError("junction node is not at 0")
        self.nodes[self.junction] = 0.0

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def has_left(self) -> bool:
        return self.n_left > 0

    def same_as(self, other: 'UniformGrid') -> bool:
        return (self.size == other.size and abs(self.dx - other.dx) < 1e-15
                and self.junction == other.junction)

    def index_of(self, x: float) -> int:
        """Nearest node index"""
        return int(np.clip(round((x - self.x_min) / self.dx), 0, self.size - 1))

    def mask(self, lo: float, hi: float) -> np.ndarray:
        return (self.nodes >= lo - 1e-12) & (self.nodes <= hi + 1e-12)

    def __repr__(self) -> str:
        return f"UniformGrid([{self.x_min:g}, {self.x_max:g}], dx={self.dx:g})"


def report_window(window: Tuple[float, float], speed: float,
                  horizon: float) -> Tuple[float, float]:
    """Part of the window that boundary data cannot reach before the horizon"""
    lo, hi = window
    reach = speed * horizon
    if lo < 0:
        lo = lo + reach
    return lo, hi - reach


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: UniformGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.size,):
            raise GridMismatchError("values do not match the grid")
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("grid function has non-finite values")

    @property
    def junction_value(self) -> float:
        return float(self.values[self.grid.junction])

    def interp(self, x) -> np.ndarray:
        return np.interp(x, self.grid.nodes, self.values)


@dataclass(frozen=True, eq=False)
class SolutionStack:
    """
    Time slices of a solution, ``values[n]`` at ``times[n]``.

    ``diagnostics`` carries solver side information (limiter trace, bracket
    checks) keyed by name, each an array aligned with ``times``.
    """
    grid: UniformGrid
    times: np.ndarray
    values: np.ndarray
    label: str = ''
    diagnostics: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != (self.times.shape[0], self.grid.size):
            raise GridMismatchError("stack shape does not match times x nodes")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def slice_at(self, t: float) -> GridFunction:
        n = int(np.argmin(np.abs(self.times - t)))
        return GridFunction(self.grid, self.values[n])

    def final(self) -> GridFunction:
        return GridFunction(self.grid, self.values[-1])

    def value(self, x: float, t: float) -> float:
        """Linear interpolation in x and t"""
        n = int(np.clip(np.searchsorted(self.times, t), 1, len(self.times) - 1))
        t0, t1 = self.times[n - 1], self.times[n]
        w = 0.0 if t1 == t0 else (t - t0) / (t1 - t0)
        u0 = np.interp(x, self.grid.nodes, self.values[n - 1])
        u1 = np.interp(x, self.grid.nodes, self.values[n])
        return float((1.0 - w) * u0 + w * u1)

    def junction_trace(self) -> np.ndarray:
        return self.values[:, self.grid.junction]

    def restricted(self, region: Optional[Tuple[float, float]]) -> np.ndarray:
        """Values restricted to nodes inside ``region`` (all nodes when None)"""
        if region is None:
            return self.values
        return self.values[:, self.grid.mask(*region)]
