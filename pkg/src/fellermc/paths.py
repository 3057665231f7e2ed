"""Uniform time grids and nonnegative sample paths with absorption bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["TimeGrid", "SamplePath"]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0, dt, 2*dt, ..., n_steps*dt."""

    dt: float
    n_steps: int

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")

    @property
    def horizon(self) -> float:
        return self.dt * self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def index_of(self, t: float) -> int:
        """Grid index of time t; t must lie on the grid (relative tol 1e-9)."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_steps or abs(k * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the grid (dt={self.dt}, horizon={self.horizon})")
        return k

    @classmethod
    def for_horizon(cls, dt: float, horizon: float) -> "TimeGrid":
        """Grid covering [0, horizon] with step dt (horizon rounded up to a step)."""
        n = max(1, int(np.ceil(horizon / dt - 1e-12)))
        return cls(dt=dt, n_steps=n)


class SamplePath:
    """A nonnegative path on a uniform time grid.

    If ``absorbed_at`` is set, the value is zero at that grid index and at
    every later one; such paths are elements of the extinction-absorbed path
    space used throughout (once extinct, forever extinct).
    """

    __slots__ = ("grid", "values", "absorbed_at")

    def __init__(self, grid: TimeGrid, values, absorbed_at: int | None = None):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_steps + 1,):
            raise ValueError(
                f"values shape {values.shape} does not match grid ({grid.n_steps + 1},)"
            )
        if np.any(values < 0):
            raise ValueError("sample path values must be nonnegative")
        if absorbed_at is not None:
            absorbed_at = int(absorbed_at)
            if not (0 <= absorbed_at <= grid.n_steps):
                raise ValueError(f"absorbed_at={absorbed_at} outside the grid")
            if np.any(values[absorbed_at:] != 0.0):
                raise ValueError("path must be identically zero from the absorption index on")
        self.grid = grid
        self.values = values
        self.values.flags.writeable = False
        self.absorbed_at = absorbed_at

    @classmethod
    def constant(cls, grid: TimeGrid, level: float) -> "SamplePath":
        if level < 0:
            raise ValueError("level must be nonnegative")
        vals = np.full(grid.n_steps + 1, float(level))
        return cls(grid, vals, absorbed_at=0 if level == 0.0 else None)

    @classmethod
    def from_values(cls, grid: TimeGrid, values) -> "SamplePath":
        """Build a path, deriving the absorption index from the first zero.

        The tail after the first zero is forced to zero (full-truncation
        simulators produce exact zeros, so this never changes simulator
        output; it normalizes hand-built arrays).
        """
        values = np.asarray(values, dtype=float).copy()
        zeros = np.flatnonzero(values == 0.0)
        absorbed_at = None
        if zeros.size:
            absorbed_at = int(zeros[0])
            values[absorbed_at:] = 0.0
        return cls(grid, values, absorbed_at=absorbed_at)

    @property
    def is_absorbed(self) -> bool:
        return self.absorbed_at is not None

    @property
    def final(self) -> float:
        return float(self.values[-1])

    def value_at(self, t: float) -> float:
        return float(self.values[self.grid.index_of(t)])

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        tail = f", absorbed_at={self.absorbed_at}" if self.absorbed_at is not None else ""
        return f"SamplePath(n={len(self)}, dt={self.grid.dt}{tail})"
