"""Mild random-field solutions of the stochastic heat and wave equations.

``u(t,x) = I0(t,x) + int Gamma(t-s, x-y) sigma(u(s,y)) W(ds,dy)
+ int Gamma(t-s, x-y) b(u(s,y)) dy ds`` on a grid, by Picard iteration on a
fixed noise realization, by a one-pass time march, or (linear case) exactly
in law mode by mode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from math import pi, sqrt
from typing import Callable

import numpy as np
from scipy.signal import fftconvolve

from . import container
from .covariance import (CovarianceModel, QuadratureSpec, _origin_cell_mass,
                         dalang_condition)
from .errors import ConvergenceError, InadmissibleError, ModelError
from .grid import GridSpec
from .integrator import lag_kernels
from .kernels import InitialData, Kernel, check_regularity, initial_term
from .noise import NoiseRealization
from .rng import standard_normals

LINEAR_STREAM = 3


@dataclass(frozen=True, eq=False)
class Field:
    """Solution samples ``values[r, i] = u(t_i, x)`` on the cells, for
    replicates r; shape ``(R, n_t + 1) + grid.shape``."""

    values: np.ndarray = field(repr=False)
    grid: GridSpec
    provenance: dict = field(default_factory=dict)
    log: tuple = ()

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ModelError("field has non-finite entries")
        self.values.setflags(write=False)

    @property
    def replicates(self) -> int:
        return self.values.shape[0]

    def at(self, t: float, x) -> np.ndarray:
        from .integrator import point_index
        return self.values[(slice(None), self.grid.time_index(t)) + point_index(self.grid, x)]

    def window_values(self) -> np.ndarray:
        """Values restricted to the observation window, cells flattened."""
        flat = self.values.reshape(self.values.shape[:2] + (-1,))
        return flat[..., self.grid.window_mask.ravel()]

    def save(self, path) -> None:
        header = {"kind": "field", "grid": self.grid.to_dict(),
                  "provenance": self.provenance, "log": list(self.log)}
        container.save(path, header, {"values": self.values})

    @classmethod
    def load(cls, path) -> "Field":
        header, arrays = container.load(path)
        if header.get("kind") != "field":
            raise ValueError("container does not hold a field")
        return cls(arrays["values"], GridSpec.from_dict(header["grid"]),
                   header["provenance"], tuple(header["log"]))

    def export_csv(self, path, replicate: int = 0) -> None:
        """One row per (time, cell) of one replicate: ``t, x_1..x_d, u``."""
        g = self.grid
        pts = g.centers.reshape(-1, g.dimension)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(g.dimension)] + ["u"])
            for i, t in enumerate(g.times):
                vals = self.values[replicate, i].ravel()
                for p, v in zip(pts, vals):
                    w.writerow([repr(float(t))] + [repr(float(c)) for c in p] + [repr(float(v))])


# ------------------------------------------------------------ coefficients

def _catalog(spec: dict) -> tuple[Callable, float]:
    name = spec.get("name")
    p = {k: v for k, v in spec.items() if k != "name"}
    if name == "zero":
        return (lambda u: np.zeros_like(u)), 0.0
    if name == "one":
        return (lambda u: np.ones_like(u)), 0.0
    if name == "linear":
        c = float(p["c"])
        return (lambda u: c * u), abs(c)
    if name == "affine":
        a, b = float(p["slope"]), float(p["intercept"])
        return (lambda u: a * u + b), abs(a)
    if name == "sine":
        a = float(p.get("amplitude", 1.0))
        return (lambda u: a * np.sin(u)), abs(a)
    if name == "custom-table":
        xs, ys = np.asarray(p["x"], dtype=float), np.asarray(p["y"], dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape or xs.size < 2 or np.any(np.diff(xs) <= 0):
            raise ModelError("table coefficient needs increasing x and matching y")
        # constant beyond the ends keeps the Lipschitz constant of the table
        return (lambda u: np.interp(u, xs, ys)), float(np.max(np.abs(np.diff(ys) / np.diff(xs))))
    raise ModelError(f"unknown coefficient {name!r}")


@dataclass(frozen=True)
class Coefficients:
    """Lipschitz ``sigma`` and ``b`` from the catalog (zero, one, linear(c),
    affine(slope, intercept), sine(amplitude), custom-table(x, y))."""

    sigma_spec: tuple
    b_spec: tuple

    @classmethod
    def from_specs(cls, sigma: dict, b: dict) -> "Coefficients":
        out = cls(tuple(sorted(sigma.items())), tuple(sorted(b.items())))
        _catalog(sigma), _catalog(b)
        return out

    @classmethod
    def linear_noise(cls) -> "Coefficients":
        return cls.from_specs({"name": "one"}, {"name": "zero"})

    def _resolve(self, spec):
        return _catalog({k: (list(v) if isinstance(v, tuple) else v) for k, v in spec})

    @property
    def sigma(self) -> Callable:
        return self._resolve(self.sigma_spec)[0]

    @property
    def b(self) -> Callable:
        return self._resolve(self.b_spec)[0]

    @property
    def sigma_lipschitz(self) -> float:
        return self._resolve(self.sigma_spec)[1]

    @property
    def b_lipschitz(self) -> float:
        return self._resolve(self.b_spec)[1]

    def to_dict(self) -> dict:
        return {"sigma": dict(self.sigma_spec), "b": dict(self.b_spec)}

    @classmethod
    def from_dict(cls, data: dict) -> "Coefficients":
        return cls.from_specs(dict(data["sigma"]), dict(data["b"]))

    def check_lipschitz(self, probes: int = 1000, spread: float = 10.0, seed: int = 0) -> bool:
        rng = np.random.default_rng(seed)
        x, y = rng.uniform(-spread, spread, (2, probes))
        for func, lip in ((self.sigma, self.sigma_lipschitz), (self.b, self.b_lipschitz)):
            if np.any(np.abs(func(x) - func(y)) > lip * np.abs(x - y) * (1 + 1e-12) + 1e-12):
                return False
        return True


# ------------------------------------------------------------ helpers

def _require_admissible(kernel: Kernel, model: CovarianceModel, grid: GridSpec,
                        quad: QuadratureSpec | None = None, box: bool = True) -> None:
    if kernel.dimension != model.dimension or model.dimension != grid.dimension:
        raise ModelError("kernel, model and grid dimensions differ")
    result = dalang_condition(model, quad)
    if not result.holds:
        raise InadmissibleError("noise is not admissible for a random-field solution",
                                result.diagnosis)
    if box and kernel.equation == "wave":
        grid.check_wave_window()


def initial_field(kernel: Kernel, data: InitialData, grid: GridSpec) -> np.ndarray:
    """``I0(t_i, x_c)`` for all grid times and cells; shape ``(n_t+1,) + shape``."""
    check_regularity(kernel, data)
    if data.name == "zero":
        return np.zeros((grid.steps + 1,) + grid.shape)
    out = np.empty((grid.steps + 1,) + grid.shape)
    for i, t in enumerate(grid.times):
        out[i] = initial_term(kernel, data, float(t), grid.centers)
    return out


def _space_axes(d):
    return tuple(range(2, 2 + d))


def _picard_map(kernels: np.ndarray, forcing: np.ndarray, grid: GridSpec) -> np.ndarray:
    """``S[i] = sum_{k<i} Gbar_{i-1-k} * F[k]`` for all i by one space-time FFT.

    ``forcing`` has shape ``(R, n_t) + shape``; the result ``(R, n_t+1) + shape``.
    """
    d, n, n_t = grid.dimension, grid.points, grid.steps
    full = fftconvolve(forcing, kernels[None], axes=(1,) + _space_axes(d))
    sl = (slice(None), slice(0, n_t)) + (slice(n - 1, 2 * n - 1),) * d
    out = np.zeros((forcing.shape[0], n_t + 1) + grid.shape)
    out[:, 1:] = full[sl]
    return out


def _forcing(coeffs, u, noise, grid):
    """``sigma(u_k) M_k + b(u_k) dt dx^d`` for slabs k (left endpoints)."""
    past = u[:, :-1]
    f = coeffs.sigma(past) * noise.cell_increments
    drift = coeffs.b(past)
    if np.any(drift != 0):
        f = f + drift * (grid.dt * grid.cell_volume)
    return f


def _check_noise(noise, grid):
    if noise.grid_increments is None:
        raise ModelError("solver needs the grid part of the noise (see project_to_grid)")
    if noise.grid != grid:
        raise ModelError("noise and solver grids differ")


def _provenance(scheme, kernel, model, noise, coeffs, data, **extra):
    out = {"scheme": scheme, "kernel": kernel.to_dict(), "model": model.to_dict(),
           "seed": None if noise is None else int(noise.seed),
           "first_replicate": None if noise is None else noise.first_replicate,
           "coefficients": None if coeffs is None else coeffs.to_dict(),
           "initial_data": None if data is None else data.to_dict()}
    out.update(extra)
    return out


def solve_picard(kernel: Kernel, model: CovarianceModel, grid: GridSpec,
                 coeffs: Coefficients, data: InitialData, noise: NoiseRealization,
                 tol: float | None = None, max_iter: int = 50, rtol: float = 1e-6) -> Field:
    """Picard iteration ``u^{n+1} = I0 + stochastic(u^n) + drift(u^n)`` on a
    fixed noise realization.

    Stops when ``M_n = max |u^{n+1} - u^n| <= max(tol, rtol * max|u^{n+1}|)``
    (``tol`` defaults to 0, leaving the relative criterion); raises
    ``ConvergenceError`` carrying the log of M_n otherwise.
    """
    _require_admissible(kernel, model, grid)
    _check_noise(noise, grid)
    kern = lag_kernels(kernel, grid)
    base = initial_field(kernel, data, grid)
    u = np.broadcast_to(base, (noise.replicates,) + base.shape).copy()
    log = []
    atol = 0.0 if tol is None else float(tol)
    for _ in range(max_iter):
        nxt = base + _picard_map(kern, _forcing(coeffs, u, noise, grid), grid)
        diff = float(np.max(np.abs(nxt - u)))
        log.append(diff)
        u = nxt
        if diff <= max(atol, rtol * float(np.max(np.abs(u)))):
            prov = _provenance("picard", kernel, model, noise, coeffs, data,
                               iterations=len(log), tol=atol, rtol=rtol)
            return Field(u, grid, prov, tuple(log))
    raise ConvergenceError(f"Picard iteration did not converge in {max_iter} iterations",
                           log)


def solve_euler(kernel: Kernel, model: CovarianceModel, grid: GridSpec,
                coeffs: Coefficients, data: InitialData, noise: NoiseRealization) -> Field:
    """One pass in time: ``u(t_i)`` from the mild formula with the integrand
    frozen at the already computed times ``t_k < t_i``."""
    _require_admissible(kernel, model, grid)
    _check_noise(noise, grid)
    kern = lag_kernels(kernel, grid)
    base = initial_field(kernel, data, grid)
    d, n = grid.dimension, grid.points
    u = np.empty((noise.replicates,) + base.shape)
    u[:, 0] = base[0]
    inc = noise.cell_increments
    forcing = np.empty((noise.replicates, grid.steps) + grid.shape)
    space = (slice(n - 1, 2 * n - 1),) * d
    for i in range(1, grid.steps + 1):
        k = i - 1
        f = coeffs.sigma(u[:, k]) * inc[:, k]
        drift = coeffs.b(u[:, k])
        if np.any(drift != 0):
            f = f + drift * (grid.dt * grid.cell_volume)
        forcing[:, k] = f
        # Gbar_{i-1-k} for k = 0..i-1, paired with forcing k
        g = kern[i - 1::-1] if i > 1 else kern[:1]
        conv = fftconvolve(forcing[:, :i], g[None], axes=_space_axes(d))
        u[:, i] = base[i] + conv[(slice(None), slice(None)) + space].sum(axis=1)
    prov = _provenance("euler", kernel, model, noise, coeffs, data)
    return Field(u, grid, prov)


# ------------------------------------------------------- linear, exact in law

def _mode_weights(model: CovarianceModel, grid: GridSpec):
    """DFT frequencies of the torus of side 2L and their spectral masses."""
    d, n = grid.dimension, grid.points
    period = 2 * grid.half_width
    ints = np.fft.fftfreq(n, d=1.0 / n).astype(int)
    mesh = np.meshgrid(*([ints] * d), indexing="ij")
    m = np.stack(mesh, axis=-1)
    r = np.sqrt(np.sum((m / period) ** 2, axis=-1))
    with np.errstate(divide="ignore"):
        w = model.spectral_radial(r) / period ** d
    if model.kind == "riesz":
        w[(0,) * d] = _origin_cell_mass(model, 0.5 / period)
    return m, r, w


def _mode_transitions(kernel: Kernel, r: np.ndarray, dt: float):
    """Exact one-step transition of the mode process and its noise factor."""
    if kernel.equation == "heat":
        lam = 4 * pi ** 2 * r * r
        a = np.exp(-lam * dt)
        with np.errstate(divide="ignore", invalid="ignore"):
            var = np.where(lam > 0, -np.expm1(-2 * lam * dt) / (2 * np.where(lam > 0, lam, 1)), dt)
        return a, np.sqrt(var)
    om = 2 * pi * r
    c, s = np.cos(om * dt), np.sin(om * dt)
    safe = np.where(om > 0, om, 1.0)
    A = np.empty(r.shape + (2, 2))
    A[..., 0, 0] = c
    A[..., 0, 1] = np.where(om > 0, s / safe, dt)
    A[..., 1, 0] = -om * s
    A[..., 1, 1] = c
    q11 = np.where(om > 0, (dt / 2 - np.sin(2 * om * dt) / (4 * safe)) / safe ** 2, dt ** 3 / 3)
    q12 = np.where(om > 0, s ** 2 / (2 * safe ** 2), dt ** 2 / 2)
    q22 = np.where(om > 0, dt / 2 + np.sin(2 * om * dt) / (4 * safe), dt)
    # Cholesky of [[q11, q12], [q12, q22]]
    l11 = np.sqrt(q11)
    l21 = np.where(l11 > 0, q12 / np.where(l11 > 0, l11, 1.0), 0.0)
    l22 = np.sqrt(np.maximum(q22 - l21 ** 2, 0.0))
    return A, (l11, l21, l22)


def _linear_modes(kernel, model, grid, seed, replicates, first_replicate):
    """Mode amplitudes ``c_m(t_i) = a_m - i b_m`` (times sqrt of spectral mass),
    shape ``(R, n_t+1) + shape``, complex."""
    m, r, w = _mode_weights(model, grid)
    n_t, dt = grid.steps, grid.dt
    per = n_t if kernel.equation == "heat" else 2 * n_t
    flat = m.reshape(-1, grid.dimension)
    z = np.empty((2, flat.shape[0], replicates, per))
    for part in range(2):
        for c, ids in enumerate(flat):
            z[part, c] = standard_normals(seed, (LINEAR_STREAM, part, *ids), per,
                                          replicates, first_replicate)
    z = z.reshape((2,) + r.shape + (replicates, per))
    z = np.moveaxis(z, -2, 1)  # (2, R, *shape, per)
    out = np.zeros((replicates, n_t + 1) + r.shape, dtype=complex)
    if kernel.equation == "heat":
        a, sd = _mode_transitions(kernel, r, dt)
        state = np.zeros((2, replicates) + r.shape)
        for i in range(n_t):
            state = a * state + sd * z[..., i]
            out[:, i + 1] = state[0] - 1j * state[1]
    else:
        A, (l11, l21, l22) = _mode_transitions(kernel, r, dt)
        u = np.zeros((2, replicates) + r.shape)
        v = np.zeros_like(u)
        for i in range(n_t):
            e1, e2 = z[..., 2 * i], z[..., 2 * i + 1]
            u, v = (A[..., 0, 0] * u + A[..., 0, 1] * v + l11 * e1,
                    A[..., 1, 0] * u + A[..., 1, 1] * v + l21 * e1 + l22 * e2)
            out[:, i + 1] = u[0] - 1j * u[1]
    return out * np.sqrt(w), m


def solve_linear_spectral(kernel: Kernel, model: CovarianceModel, grid: GridSpec,
                          seed: int, replicates: int = 1, first_replicate: int = 0) -> Field:
    """Stochastic convolution ``int Gamma(t-s, x-y) W(ds, dy)`` on the torus
    of side 2L, exact in law for every retained DFT mode.

    Each mode is an independent Gaussian process (Ornstein-Uhlenbeck for
    heat, a driven oscillator for wave) advanced by its exact transition.
    """
    _require_admissible(kernel, model, grid, box=False)
    coef, m = _linear_modes(kernel, model, grid, seed, replicates, first_replicate)
    d, n = grid.dimension, grid.points
    period = 2 * grid.half_width
    x0 = grid.axis[0]
    phase = np.exp(2j * pi * np.sum(m, axis=-1) * x0 / period)
    spatial = tuple(range(2, 2 + d))
    vals = np.real(np.fft.ifftn(coef * phase, axes=spatial)) * n ** d
    prov = _provenance("linear-spectral", kernel, model, None, None, None, seed=int(seed),
                       first_replicate=first_replicate)
    return Field(vals, grid, prov)


def sample_linear_points(kernel: Kernel, model: CovarianceModel, grid: GridSpec, seed: int,
                         points, replicates: int, chunk: int = 500,
                         first_replicate: int = 0) -> np.ndarray:
    """The same law at a few points, chunked over replicates; returns
    ``(R, n_t+1, n_points)``.  Replicate r equals replicate r of
    ``solve_linear_spectral`` with the same seed."""
    _require_admissible(kernel, model, grid, box=False)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = []
    period = 2 * grid.half_width
    for start in range(0, replicates, chunk):
        r = min(chunk, replicates - start)
        coef, m = _linear_modes(kernel, model, grid, seed, r, first_replicate + start)
        flat_m = m.reshape(-1, grid.dimension)
        basis = np.exp(2j * pi * (pts @ flat_m.T) / period)  # (P, modes)
        c = coef.reshape(coef.shape[:2] + (-1,))
        out.append(np.real(c @ basis.T))
    return np.concatenate(out, axis=0)


# ------------------------------------------------------------ weighted norms

def weight_values(grid: GridSpec, weight: str, k: float | None = None) -> np.ndarray:
    r = np.linalg.norm(grid.centers, axis=-1)
    if weight == "theta":
        if k is None or not k > grid.dimension:
            raise ModelError("theta weight needs k > d")
        with np.errstate(divide="ignore"):
            return np.minimum(1.0, r ** -float(k))
    if weight == "vartheta":
        return np.exp(-r)
    raise ModelError(f"unknown weight {weight!r}")


def weighted_l2_norm(fld: Field, weight: str = "theta", k: float | None = None,
                     region: str = "window") -> np.ndarray:
    """``sum_c u(t, x_c)^2 w(x_c) dx^d`` per replicate and time slice.

    ``theta``: ``1 ^ |x|^-k`` (k > d); ``vartheta``: ``exp(-|x|)``.  The sum
    runs over the observation window (``region='window'``) or the box.
    """
    g = fld.grid
    w = weight_values(g, weight, k)
    if region == "window":
        w = np.where(g.window_mask, w, 0.0)
    elif region != "box":
        raise ModelError(f"unknown region {region!r}")
    axes = tuple(range(2, 2 + g.dimension))
    return np.sum(fld.values ** 2 * w, axis=axes) * g.cell_volume
