"""Stochastic integrals against noise realizations, in grid (Walsh) and
series (spectral) form, plus the deterministic drift convolution.

Time discretization: the integrand is evaluated at the left end ``s_k`` of
each slab (Ito); a kernel ``Gamma(t - s)`` is evaluated at the slab midpoint,
``tau = t - s_k - dt/2``, which is exact for the linear-in-time wave mass and
keeps ``tau > 0`` on the last slab.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import ceil, pi, sqrt
from typing import Callable

import numpy as np

from .covariance import CovarianceModel, QuadratureSpec, u_inner
from .errors import ModelError
from .grid import GridSpec
from .kernels import Kernel, cell_kernel, fourier_radial, j_function, time_rule
from .noise import (NoiseRealization, SpectralBasis, sample_grid_increments,
                    sample_spectral_increments)
from .quadrature import composite_gauss


@dataclass(frozen=True)
class History:
    """Read-only past of a field: ``values[i]`` is the state at time index i,
    for ``i <= last`` only (shape ``(last + 1, R) + grid.shape``)."""

    values: np.ndarray
    grid: GridSpec

    @property
    def last(self) -> int:
        return self.values.shape[0] - 1

    @property
    def current(self) -> np.ndarray:
        return self.values[-1]


@dataclass(frozen=True)
class IntegrandProcess:
    """``g(s, y)``, possibly depending on the past of a field.

    ``evaluator(s, y, history)`` takes points ``y (..., d)`` and returns values
    broadcastable to ``(R,) + y.shape[:-1]``.  For slab ``[s_k, s_{k+1})`` the
    history holds states up to time ``s_k`` only, so evaluation is predictable.
    """

    evaluator: Callable
    deterministic: bool = True
    constant: float | None = None
    tag: str = "custom"

    def __call__(self, s, y, history: History | None = None):
        if self.deterministic:
            return self.evaluator(s, y, None)
        return self.evaluator(s, y, history)

    @classmethod
    def zero(cls) -> "IntegrandProcess":
        return cls.constant_value(0.0)

    @classmethod
    def constant_value(cls, c: float) -> "IntegrandProcess":
        c = float(c)
        return cls(lambda s, y, h: np.full(np.shape(y)[:-1], c), True, c, f"constant({c:g})")

    @classmethod
    def from_function(cls, func: Callable, tag: str = "function") -> "IntegrandProcess":
        """Deterministic ``g(s, y)``."""
        return cls(lambda s, y, h: func(s, y), True, None, tag)

    @classmethod
    def of_state(cls, func: Callable, tag: str = "state") -> "IntegrandProcess":
        """``func(u(s, y))`` for the field whose past is passed as history."""
        return cls(lambda s, y, h: func(h.current), False, None, tag)

    @classmethod
    def cell_indicator(cls, grid: GridSpec, index) -> "IntegrandProcess":
        center = grid.centers[tuple(index)]
        half = 0.5 * grid.dx

        def ind(s, y):
            return np.all(np.abs(np.asarray(y) - center) < half * (1 + 1e-12), axis=-1) * 1.0

        return cls.from_function(ind, f"indicator{tuple(index)}")

    @classmethod
    def basis_function(cls, basis: SpectralBasis, j: int) -> "IntegrandProcess":
        return cls.from_function(lambda s, y: basis.evaluate(y)[..., j], f"e_{j}")

    def scaled_sum(self, a: float, other: "IntegrandProcess", b: float) -> "IntegrandProcess":
        const = None
        if self.constant is not None and other.constant is not None:
            const = a * self.constant + b * other.constant
        return IntegrandProcess(
            lambda s, y, h: a * self.evaluator(s, y, h) + b * other.evaluator(s, y, h),
            self.deterministic and other.deterministic, const,
            f"{a:g}*{self.tag}+{b:g}*{other.tag}")


def slab_count(grid: GridSpec, t: float) -> int:
    return grid.time_index(t)


def point_index(grid: GridSpec, x) -> tuple[int, ...]:
    """Multi-index of the cell centered at ``x`` (x must be a cell center)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (grid.dimension,):
        raise ValueError(f"x must be a point in R^{grid.dimension}")
    pos = (x + grid.half_width) / grid.dx - 0.5
    idx = np.rint(pos).astype(int)
    if np.any(np.abs(pos - idx) > 1e-8) or np.any(idx < 0) or np.any(idx >= grid.points):
        raise ModelError("x must be a cell center of the grid")
    return tuple(int(i) for i in idx)


@lru_cache(maxsize=32)
def lag_kernels(kernel: Kernel, grid: GridSpec) -> np.ndarray:
    """Cell-averaged ``Gamma((m + 1/2) dt)`` on lags ``[-(n-1), n-1]^d``, for
    slab lags ``m = 0 .. n_t - 1``; shape ``(n_t,) + (2n - 1,)*d``."""
    if kernel.dimension != grid.dimension:
        raise ModelError("kernel and grid dimensions differ")
    n = grid.points
    out = np.empty((grid.steps,) + (2 * n - 1,) * grid.dimension)
    for m in range(grid.steps):
        out[m] = cell_kernel(kernel, (m + 0.5) * grid.dt, grid.dx, n - 1)
    out.setflags(write=False)
    return out


def _kernel_at(kernel, grid, m, idx):
    """Cell averages of ``Gamma(tau_m, x - y_c)`` over cells c, for x at idx."""
    lag = lag_kernels(kernel, grid)[m]
    n = grid.points
    sl = tuple(slice(i + n - 1, i - 1 if i > 0 else None, -1) for i in idx)
    return lag[sl]


def _history(state, k):
    if state is None:
        return None
    return History(state[:k + 1], None)


def walsh_integral(noise: NoiseRealization, g: IntegrandProcess, t: float, x=None,
                   kernel: Kernel | None = None, state: np.ndarray | None = None) -> np.ndarray:
    """Riemann-Ito sum ``sum_k sum_c integrand(s_k, y_c) M(slab_k x cell_c)``.

    With ``kernel`` the integrand is ``Gamma(t - s, x - y) g(s, y)``, with
    Gamma replaced by its cell average (sphere-binned for wave d = 3).
    ``state`` (shape ``(n_t + 1, R) + grid.shape``) feeds state-dependent g.
    Returns one value per replicate.
    """
    if noise.grid_increments is None:
        raise ModelError("walsh_integral needs the grid part of the noise")
    grid = noise.grid
    n = slab_count(grid, t)
    inc = noise.cell_increments
    centers = grid.centers
    idx = point_index(grid, x) if kernel is not None else None
    total = np.zeros(noise.replicates)
    axes = tuple(range(1, 1 + grid.dimension))
    for k in range(n):
        vals = np.asarray(g(k * grid.dt, centers, _history(state, k)), dtype=float)
        if kernel is not None:
            vals = vals * _kernel_at(kernel, grid, n - 1 - k, idx)
        total += np.sum(np.broadcast_to(vals, inc[:, k].shape) * inc[:, k], axis=axes)
    return total


def _fine_rule(grid: GridSpec, basis: SpectralBasis, order: int = 8):
    """Tensor Gauss rule on the box, resolving both cells and basis modes."""
    fmax = float(np.max(np.abs(basis.frequencies))) if basis.size else 0.0
    panels = max(grid.points, int(ceil(4 * fmax * 2 * grid.half_width)))
    x, w = composite_gauss(np.linspace(-grid.half_width, grid.half_width, panels + 1), order)
    d = grid.dimension
    pts = np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    return pts, wts


def mode_coefficients(noise: NoiseRealization, g: IntegrandProcess, t: float, x=None,
                      kernel: Kernel | None = None, state: np.ndarray | None = None):
    """``<integrand(s_k, .), e_j>_U`` per slab and basis function.

    Shape ``(n_slabs, J)`` for deterministic integrands, else
    ``(n_slabs, R, J)``.  Kernel with constant g: closed form via the
    Fourier transform of Gamma.  Deterministic g without kernel: fine Gauss
    quadrature on the box.  Otherwise: cell quadrature.
    """
    basis = noise.basis
    grid = noise.grid
    n = slab_count(grid, t)
    xi = basis.frequencies
    taus = t - (np.arange(n) + 0.5) * grid.dt
    if kernel is not None and g.constant is not None:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        r = np.linalg.norm(xi, axis=1)
        phase = np.cos(2 * pi * xi @ x - basis.phases)
        return g.constant * basis.amplitudes * phase * fourier_radial(kernel, taus[:, None], r)
    if kernel is None and g.deterministic:
        pts, wts = _fine_rule(grid, basis)
        trig = np.cos(2 * pi * pts @ xi.T - basis.phases) * basis.amplitudes
        out = np.empty((n, basis.size))
        for k in range(n):
            out[k] = (wts * np.broadcast_to(g(k * grid.dt, pts), wts.shape)) @ trig
        return out
    idx = point_index(grid, x) if kernel is not None else None
    rows = []
    for k in range(n):
        vals = np.asarray(g(k * grid.dt, grid.centers, _history(state, k)), dtype=float)
        if kernel is not None:
            vals = vals * _kernel_at(kernel, grid, n - 1 - k, idx)
        rows.append(basis.coefficients(vals, grid))
    return np.stack(rows)


def series_integral(noise: NoiseRealization, g: IntegrandProcess, t: float, x=None,
                    kernel: Kernel | None = None, state: np.ndarray | None = None) -> np.ndarray:
    """Truncated ``sum_j sum_k <integrand(s_k), e_j>_U dbeta_j[k]`` per replicate."""
    if noise.spectral_increments is None or noise.basis is None:
        raise ModelError("series_integral needs the spectral part of the noise")
    coef = mode_coefficients(noise, g, t, x, kernel, state)
    n = coef.shape[0]
    db = noise.spectral_increments[:, :n, :]
    if coef.ndim == 2:
        return np.einsum("rkj,kj->r", db, coef)
    return np.einsum("rkj,krj->r", db, coef)


def drift_integral(kernel: Kernel, b: IntegrandProcess, t: float, x, grid: GridSpec,
                   state: np.ndarray | None = None) -> np.ndarray | float:
    """``int_0^t int Gamma(t - s, x - y) b(s, y) dy ds`` on the grid cells.

    Deterministic b gives a float; state-dependent b one value per replicate.
    """
    n = slab_count(grid, t)
    idx = point_index(grid, x)
    axes = tuple(range(-grid.dimension, 0))
    total = 0.0
    for k in range(n):
        vals = np.asarray(b(k * grid.dt, grid.centers, _history(state, k)), dtype=float)
        gam = _kernel_at(kernel, grid, n - 1 - k, idx)
        total = total + np.sum(vals * gam, axis=axes) * grid.cell_volume * grid.dt
    return float(total) if np.ndim(total) == 0 else total


# ------------------------------------------------------------ isometry

@dataclass(frozen=True)
class IsometryResult:
    mc_second_moment: float
    quadrature_norm: float
    gap: float
    standard_error: float
    discrete_norm: float
    replicates: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def kernel_norm(kernel: Kernel, model: CovarianceModel, t: float, scale: float = 1.0,
                shift: float = 0.0, quad: QuadratureSpec | None = None) -> float:
    """``int_0^t |scale * Gamma(t + shift - s)|_U^2 ds = scale^2 int J``."""
    if t <= 0:
        return 0.0
    beta = 0.0 if shift > 0 else 0.5 if kernel.equation == "heat" else 0.0
    s, w = time_rule(t, beta)
    vals = np.array([j_function(kernel, model, si + shift, quad) for si in s])
    return float(scale ** 2 * np.sum(w * vals))


def function_norm(g: IntegrandProcess, model: CovarianceModel, grid: GridSpec, t: float,
                  order: int = 24) -> float:
    """``int_0^t |g(s, .)|_U^2 ds`` for deterministic g, by Gauss-Legendre in
    time and the spectral U-product of the cell samples."""
    if t <= 0:
        return 0.0
    s, w = composite_gauss(np.linspace(0.0, t, 5), order // 4 or 1)
    total = 0.0
    for si, wi in zip(s, w):
        vals = np.broadcast_to(g(si, grid.centers), grid.shape)
        total += wi * u_inner(model, vals, vals, grid, check=False)
    return float(total)


def isometry_gap(g: IntegrandProcess, model: CovarianceModel, grid: GridSpec,
                 replicates: int, seed: int, kernel: Kernel | None = None, x=None,
                 formulation: str = "walsh", truncation: int | None = None,
                 quadrature_norm: float | None = None, period: float | None = None,
                 chunk: int = 2000) -> IsometryResult:
    """Monte Carlo ``E[(g . W)^2]`` at time T against ``int_0^T |g_s|_U^2 ds``.

    ``quadrature_norm`` may be supplied by an independent oracle; otherwise
    it is computed from J (kernel with constant g) or from U-products.
    ``discrete_norm`` is the exact second moment of the discretized integral.
    """
    if not g.deterministic:
        raise ModelError("isometry_gap needs a deterministic integrand")
    T = grid.horizon
    if x is None:
        x = np.zeros(grid.dimension) if grid.points % 2 else grid.centers[(grid.points // 2,) * grid.dimension]
    vals = []
    discrete = None
    for start in range(0, replicates, chunk):
        r = min(chunk, replicates - start)
        if formulation == "walsh":
            noise = sample_grid_increments(model, grid, seed, r, start)
            vals.append(walsh_integral(noise, g, T, x, kernel))
            if discrete is None:
                discrete = _walsh_discrete_norm(noise, g, T, x, kernel)
        elif formulation == "series":
            if truncation is None:
                raise ModelError("series formulation needs a truncation J")
            noise = sample_spectral_increments(model, grid, truncation, seed, r, start,
                                               period=period)
            if discrete is None:
                coef = mode_coefficients(noise, g, T, x, kernel)
            vals.append(np.einsum("rkj,kj->r", noise.spectral_increments[:, :coef.shape[0]], coef))
            if discrete is None:
                discrete = float(np.sum(coef ** 2) * grid.dt)
        else:
            raise ModelError(f"unknown formulation {formulation!r}")
    sq = np.concatenate(vals) ** 2
    mc = float(sq.mean())
    se = float(sq.std(ddof=1) / sqrt(sq.size)) if sq.size > 1 else 0.0
    if quadrature_norm is None:
        if g.constant is not None and g.constant == 0.0:
            quadrature_norm = 0.0
        elif kernel is not None and g.constant is not None:
            quadrature_norm = kernel_norm(kernel, model, T, g.constant)
        elif kernel is None:
            quadrature_norm = function_norm(g, model, grid, T)
        else:
            raise ModelError("supply quadrature_norm for kernel-weighted integrands")
    return IsometryResult(mc, quadrature_norm, mc - quadrature_norm, se, discrete, sq.size)


def _walsh_discrete_norm(noise, g, t, x, kernel):
    """Exact ``E[(sum g M)^2]`` of the grid sum: ``dt sum_k v_k^T C v_k dx^2d``."""
    from .covariance import covariance_matrix

    grid = noise.grid
    n = slab_count(grid, t)
    idx = point_index(grid, x) if kernel is not None else None
    cov = None
    if noise.model.kind != "white":
        if grid.n_cells > 4096:
            return float("nan")
        cov = covariance_matrix(noise.model, grid)
    total = 0.0
    for k in range(n):
        v = np.broadcast_to(np.asarray(g(k * grid.dt, grid.centers), dtype=float), grid.shape)
        if kernel is not None:
            v = v * _kernel_at(kernel, grid, n - 1 - k, idx)
        v = v.ravel() * grid.cell_volume
        total += (v @ v / grid.cell_volume if cov is None else v @ cov @ v) * grid.dt
    return float(total)
