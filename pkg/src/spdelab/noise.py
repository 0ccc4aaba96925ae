"""Gaussian noise, white in time and homogeneous in space, in two coupled forms.

Grid form: per time slab, the cell averages of the noise, with covariance
``dt * covariance_matrix``.  Spectral form: independent N(0, dt) increments
of the coordinates on an orthonormal basis of U built from trigonometric
modes of the periodized box.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import pi, sqrt

import numpy as np

from . import container
from .covariance import (CovarianceModel, _origin_cell_mass, covariance_matrix,
                         factorize)
from .errors import ModelError
from .grid import GridSpec
from .rng import standard_normals

__all__ = ["GridSpec", "NoiseRealization", "SpectralBasis", "sample_grid_increments",
           "sample_spectral_increments", "project_to_grid", "coarsen",
           "save_noise", "load_noise"]

GRID_STREAM = 1
SPECTRAL_STREAM = 2
VARIANTS = ("standard", "rotated")


def _lattice_modes(d: int, count: int) -> np.ndarray:
    """Half-lattice ``m in Z^d`` (one of each ±m pair, plus 0), sorted by
    ``(|m|^2, lexicographic)``, enough to supply ``count`` basis functions."""
    radius = 1
    while True:
        ax = np.arange(-radius, radius + 1)
        m = np.stack(np.meshgrid(*([ax] * d), indexing="ij"), axis=-1).reshape(-1, d)
        first = np.array([row[np.flatnonzero(row)[0]] if row.any() else 1 for row in m])
        m = m[first > 0]
        norm2 = np.sum(m * m, axis=1)
        order = np.lexsort(tuple(m[:, j] for j in range(d - 1, -1, -1)) + (norm2,))
        m = m[order]
        norm2 = norm2[order]
        funcs = np.where(np.any(m != 0, axis=1), 2, 1)
        cum = np.cumsum(funcs)
        if cum[-1] >= count and norm2[np.searchsorted(cum, count)] <= radius ** 2:
            return m[:np.searchsorted(cum, count) + 1]
        radius *= 2


@dataclass(frozen=True, eq=False)
class SpectralBasis:
    """Orthonormal family ``e_j = a_j cos(2 pi xi_j . y - phase_j)`` of U on
    the torus of side ``period``.

    Each lattice frequency ``m != 0`` gives two functions (cos and sin, or
    their 45-degree rotations for ``variant='rotated'``); ``m = 0`` gives one.
    ``amplitudes`` are the factors with ``<phi, e_j>_U = amplitude_j *
    int phi(y) cos(2 pi xi_j . y - phase_j) dy``.
    """

    dimension: int
    period: float
    size: int
    variant: str
    modes: np.ndarray = field(repr=False)
    phases: np.ndarray = field(repr=False)
    amplitudes: np.ndarray = field(repr=False)

    @property
    def frequencies(self) -> np.ndarray:
        return self.modes / self.period

    @classmethod
    def build(cls, model: CovarianceModel, period: float, size: int,
              variant: str = "standard") -> "SpectralBasis":
        if size < 1:
            raise ModelError("truncation J must be >= 1")
        if variant not in VARIANTS:
            raise ModelError(f"unknown basis variant {variant!r}")
        d = model.dimension
        lattice = _lattice_modes(d, size)
        modes, phases, weights = [], [], []
        vol = period ** d
        for m in lattice:
            if not m.any():
                if model.kind == "riesz":
                    w = _origin_cell_mass(model, 0.5 / period)
                else:
                    w = float(model.spectral_radial(0.0)) / vol
                modes.append(m)
                phases.append(0.0)
                weights.append(w)
                continue
            w = 2.0 * float(model.spectral_radial(np.linalg.norm(m) / period)) / vol
            pair = (0.0, 0.5 * pi) if variant == "standard" else (0.25 * pi, -0.25 * pi)
            for ph in pair:
                modes.append(m)
                phases.append(ph)
                weights.append(w)
        modes = np.array(modes[:size], dtype=float)
        phases = np.array(phases[:size])
        amps = np.sqrt(np.array(weights[:size]))
        for arr in (modes, phases, amps):
            arr.setflags(write=False)
        return cls(d, float(period), size, variant, modes, phases, amps)

    def evaluate(self, points) -> np.ndarray:
        """``e_j(y)`` at ``points (..., d)``; shape ``(..., J)``.

        Unit U-norm needs the factor ``2 / (P^d a_j)`` for cos/sin pairs and
        ``1 / (P^d a_j)`` for the constant mode; zero-weight modes give 0.
        """
        pts = np.asarray(points, dtype=float)
        arg = 2 * pi * pts @ self.frequencies.T - self.phases
        a = self.amplitudes
        pair = np.where(np.any(self.modes != 0, axis=1), 2.0, 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(a > 0, pair / (self.period ** self.dimension * np.where(a > 0, a, 1.0)), 0.0)
        return scale * np.cos(arg)

    def cell_coefficients(self, grid: GridSpec) -> np.ndarray:
        """``<1_cell, e_j>_U / dx^d`` per cell, shape ``(J,) + grid.shape``."""
        d = grid.dimension
        sinc = np.prod(np.sinc(self.frequencies * grid.dx), axis=1)
        centers = grid.centers.reshape(-1, d)
        arg = 2 * pi * centers @ self.frequencies.T - self.phases
        out = (self.amplitudes * sinc) * np.cos(arg)
        return out.T.reshape((self.size,) + grid.shape)

    def coefficients(self, values: np.ndarray, grid: GridSpec) -> np.ndarray:
        """``<phi, e_j>_U`` for ``phi`` piecewise constant on the cells.

        ``values`` has trailing shape ``grid.shape``; result has trailing J.
        """
        cells = self.cell_coefficients(grid).reshape(self.size, -1)
        flat = np.asarray(values).reshape(np.shape(values)[:np.ndim(values) - grid.dimension] + (-1,))
        return flat @ cells.T * grid.cell_volume

    def to_dict(self) -> dict:
        return {"dimension": self.dimension, "period": self.period, "size": self.size,
                "variant": self.variant}


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """Seeded noise draw for ``replicates`` independent replicates.

    ``grid_increments``: cell averages per slab, shape ``(R, n_t) + grid.shape``.
    ``spectral_increments``: ``(R, n_t, J)``, i.i.d. N(0, dt).
    ``stream_ids`` records how the random streams were keyed.
    """

    grid: GridSpec
    model: CovarianceModel
    seed: int
    replicates: int
    first_replicate: int = 0
    grid_increments: np.ndarray | None = field(default=None, repr=False)
    spectral_increments: np.ndarray | None = field(default=None, repr=False)
    basis: SpectralBasis | None = None
    jitter: float = 0.0
    stream_ids: str = ""

    def __post_init__(self):
        for arr in (self.grid_increments, self.spectral_increments):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def cell_increments(self) -> np.ndarray:
        """Increments of the martingale measure over (slab x cell)."""
        if self.grid_increments is None:
            raise ModelError("noise realization has no grid part")
        return self.grid_increments * self.grid.cell_volume

    def negated(self) -> "NoiseRealization":
        return replace(self,
                       grid_increments=None if self.grid_increments is None else -self.grid_increments,
                       spectral_increments=None if self.spectral_increments is None
                       else -self.spectral_increments)

    def replicate(self, r: int) -> "NoiseRealization":
        """Single-replicate view of replicate ``r`` (0-based within this draw)."""
        sl = slice(r, r + 1)
        return replace(self, replicates=1, first_replicate=self.first_replicate + r,
                       grid_increments=None if self.grid_increments is None
                       else self.grid_increments[sl],
                       spectral_increments=None if self.spectral_increments is None
                       else self.spectral_increments[sl])

    def header(self) -> dict:
        return {"model": self.model.to_dict(), "grid": self.grid.to_dict(),
                "seed": int(self.seed), "replicates": self.replicates,
                "first_replicate": self.first_replicate,
                "J": None if self.basis is None else self.basis.size,
                "basis": None if self.basis is None else self.basis.to_dict(),
                "jitter": self.jitter, "stream_ids": self.stream_ids}


def _check_grid(model, grid):
    if model.dimension != grid.dimension:
        raise ModelError("model and grid dimensions differ")


def sample_grid_increments(model: CovarianceModel, grid: GridSpec, seed: int,
                           replicates: int = 1, first_replicate: int = 0) -> NoiseRealization:
    """Cell-averaged increments with covariance ``dt * covariance_matrix``.

    The standard normals of a cell come from a stream keyed by the cell's
    global lattice index, so enlarging the box leaves existing cells' draws
    unchanged (exactly coupled for white noise).
    """
    _check_grid(model, grid)
    if not grid.dt > 0:
        raise ModelError("time step must be positive")
    n_t = grid.steps
    gidx = grid.global_index.reshape(-1, grid.dimension)
    z = np.empty((replicates, n_t, gidx.shape[0]))
    for c, ids in enumerate(gidx):
        z[:, :, c] = standard_normals(seed, (GRID_STREAM, *ids), n_t, replicates,
                                      first_replicate)
    jitter = 0.0
    if model.kind == "white":
        inc = z / sqrt(grid.cell_volume)
    else:
        chol, jitter = factorize(covariance_matrix(model, grid))
        inc = z @ chol.T
    inc *= sqrt(grid.dt)
    return NoiseRealization(grid, model, int(seed), replicates, first_replicate,
                            grid_increments=inc.reshape((replicates, n_t) + grid.shape),
                            jitter=jitter, stream_ids="grid:cell-global-index")


def sample_spectral_increments(model: CovarianceModel, grid: GridSpec, truncation: int,
                               seed: int, replicates: int = 1, first_replicate: int = 0,
                               variant: str = "standard",
                               period: float | None = None) -> NoiseRealization:
    """i.i.d. N(0, dt) increments for basis functions ``j < truncation``.

    One stream per mode, so a larger truncation reproduces the first columns.
    The basis lives on the torus of side ``period`` (default: the box, 2L);
    a longer period pushes the wrap-around of correlated noise out of the box.
    """
    _check_grid(model, grid)
    period = 2.0 * grid.half_width if period is None else float(period)
    if period < 2.0 * grid.half_width:
        raise ModelError("basis period must cover the box")
    basis = SpectralBasis.build(model, period, truncation, variant)
    inc = np.empty((replicates, grid.steps, truncation))
    for j in range(truncation):
        inc[:, :, j] = standard_normals(seed, (SPECTRAL_STREAM, j), grid.steps,
                                        replicates, first_replicate)
    inc *= sqrt(grid.dt)
    return NoiseRealization(grid, model, int(seed), replicates, first_replicate,
                            spectral_increments=inc, basis=basis,
                            stream_ids="spectral:mode")


def project_to_grid(noise: NoiseRealization, grid: GridSpec | None = None) -> NoiseRealization:
    """Grid part from the spectral part: cell average of ``sum_j e_j dbeta_j``."""
    if noise.spectral_increments is None or noise.basis is None:
        raise ModelError("noise realization has no spectral part")
    grid = grid or noise.grid
    if grid.steps != noise.grid.steps or grid.horizon != noise.grid.horizon:
        raise ModelError("projection grid must share the time lattice")
    cells = noise.basis.cell_coefficients(grid).reshape(noise.basis.size, -1)
    inc = noise.spectral_increments @ cells
    R = noise.replicates
    return replace(noise, grid=grid,
                   grid_increments=inc.reshape((R, grid.steps) + grid.shape))


def coarsen(noise: NoiseRealization, time_factor: int = 1,
            space_factor: int = 1) -> NoiseRealization:
    """The same path on a coarser lattice: slabs summed, cells averaged."""
    grid = noise.grid
    if grid.steps % time_factor or grid.points % space_factor:
        raise ModelError("coarsening factors must divide the lattice sizes")
    coarse = GridSpec(grid.dimension, grid.half_width, grid.points // space_factor,
                      grid.horizon, grid.steps // time_factor, grid.window)
    R, d = noise.replicates, grid.dimension
    g = s = None
    if noise.grid_increments is not None:
        shape = [R, coarse.steps, time_factor]
        for _ in range(d):
            shape += [coarse.points, space_factor]
        g = noise.grid_increments.reshape(shape).sum(axis=2)
        g = g.mean(axis=tuple(3 + 2 * i for i in range(d)))
    if noise.spectral_increments is not None:
        s = noise.spectral_increments.reshape(R, coarse.steps, time_factor, -1).sum(axis=2)
    return replace(noise, grid=coarse, grid_increments=g, spectral_increments=s)


def save_noise(noise: NoiseRealization, path) -> None:
    arrays = {}
    if noise.grid_increments is not None:
        arrays["grid_increments"] = noise.grid_increments
    if noise.spectral_increments is not None:
        arrays["spectral_increments"] = noise.spectral_increments
    container.save(path, dict(noise.header(), kind="noise"), arrays)


def load_noise(path) -> NoiseRealization:
    header, arrays = container.load(path)
    if header.get("kind") != "noise":
        raise ValueError("container does not hold a noise realization")
    model = CovarianceModel.from_dict(header["model"])
    grid = GridSpec.from_dict(header["grid"])
    basis = None
    if header["basis"] is not None:
        b = header["basis"]
        basis = SpectralBasis.build(model, b["period"], b["size"], b["variant"])
    return NoiseRealization(grid, model, header["seed"], header["replicates"],
                            header["first_replicate"], arrays.get("grid_increments"),
                            arrays.get("spectral_increments"), basis, header["jitter"],
                            header["stream_ids"])
