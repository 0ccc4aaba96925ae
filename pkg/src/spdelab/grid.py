"""Space-time lattice shared by the noise, integrator and solver modules."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import cached_property

import numpy as np

from .errors import ModelError


@dataclass(frozen=True)
class GridSpec:
    """Cells of width ``dx`` tiling ``[-L, L]^d`` and ``steps`` slabs on ``[0, T]``.

    ``window`` is the half-width of the observation sub-box; fields are
    reported there.  It defaults to the whole box.
    """

    dimension: int
    half_width: float
    points: int
    horizon: float
    steps: int
    window: float | None = None

    def __post_init__(self):
        if self.dimension < 1:
            raise ModelError("dimension must be a positive integer")
        if self.points < 1 or self.steps < 1:
            raise ModelError("points and steps must be positive")
        if not (self.half_width > 0 and self.horizon > 0):
            raise ModelError("grid spacing must be positive: need L > 0 and T > 0")
        if self.window is not None and not (0 < self.window <= self.half_width):
            raise ModelError("observation window must lie inside the box")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.points

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @property
    def cell_volume(self) -> float:
        return self.dx ** self.dimension

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points,) * self.dimension

    @property
    def n_cells(self) -> int:
        return self.points ** self.dimension

    @property
    def window_half_width(self) -> float:
        return self.half_width if self.window is None else self.window

    @cached_property
    def axis(self) -> np.ndarray:
        """Cell centers along one axis."""
        return -self.half_width + (np.arange(self.points) + 0.5) * self.dx

    @cached_property
    def centers(self) -> np.ndarray:
        """Cell centers, shape ``shape + (d,)``."""
        mesh = np.meshgrid(*([self.axis] * self.dimension), indexing="ij")
        return np.stack(mesh, axis=-1)

    @cached_property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    @cached_property
    def window_mask(self) -> np.ndarray:
        w = self.window_half_width + 1e-12 * self.half_width
        return np.all(np.abs(self.centers) <= w, axis=-1)

    @cached_property
    def global_index(self) -> np.ndarray:
        """Integer lattice coordinates of every cell, centered on the origin.

        A cell's index depends only on its position and ``dx``, so boxes of
        different size share indices on their common cells.
        """
        idx = np.arange(self.points) - self.points // 2
        mesh = np.meshgrid(*([idx] * self.dimension), indexing="ij")
        return np.stack(mesh, axis=-1)

    def time_index(self, t: float) -> int:
        i = int(round(t / self.dt))
        if abs(i * self.dt - t) > 1e-9 * max(1.0, abs(t)) or not 0 <= i <= self.steps:
            raise ModelError(f"time {t} is not a grid time")
        return i

    def check_wave_window(self) -> None:
        if self.half_width + 1e-12 < self.window_half_width + self.horizon:
            raise ModelError(
                "wave grids need L >= window + T so that box truncation is exact "
                f"on the window (L={self.half_width}, window={self.window_half_width}, "
                f"T={self.horizon})")

    def refine(self, time_factor: int = 2, space_factor: int = 2) -> "GridSpec":
        return GridSpec(self.dimension, self.half_width, self.points * space_factor,
                        self.horizon, self.steps * time_factor, self.window)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GridSpec":
        return cls(**data)
