"""Fundamental solutions of the heat and wave equations and their functionals.

``Gamma(t)`` is the heat kernel (any d) or the wave kernel (d = 1, 2, 3); for
wave in d = 3 it is the measure ``sigma_t / (4 pi t)`` on the sphere of
radius t.  Fourier transforms use the ``exp(-2 pi i xi.x)`` convention.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from math import ceil, pi, sqrt
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import erfc, ndtr, roots_hermite

from .covariance import (CovarianceModel, QuadratureSpec, dalang_condition,
                         spectral_tail)
from .errors import DivergenceError, InconclusiveError, ModelError, RegularityError
from .quadrature import (composite_gauss, gauss_legendre, jacobi_unit,
                         radial_rule, sphere_area, sphere_rule)

EQUATIONS = ("heat", "wave")
HEAT_RADIUS_FACTOR = 8.0


@dataclass(frozen=True)
class Kernel:
    equation: str
    dimension: int
    sphere_order: tuple[int, int] = (32, 64)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ModelError(f"unknown equation {self.equation!r}")
        if self.dimension < 1:
            raise ModelError("dimension must be a positive integer")
        if self.equation == "wave" and self.dimension not in (1, 2, 3):
            raise ModelError("wave requires d in {1,2,3}: the fundamental solution is "
                             "not a nonnegative measure for d > 3")

    @property
    def is_measure(self) -> bool:
        return self.equation == "wave" and self.dimension == 3

    def support_radius(self, t: float) -> float:
        return t if self.equation == "wave" else float("inf")

    def effective_radius(self, t: float) -> float:
        """Radius outside which the kernel mass is negligible (< 1e-12)."""
        if self.equation == "wave":
            return t
        return HEAT_RADIUS_FACTOR * sqrt(2.0 * t)

    def mass(self, t: float) -> float:
        return 1.0 if self.equation == "heat" else float(t)

    def fourier(self, t, xi):
        return green_fourier(self, t, xi)

    def to_dict(self) -> dict:
        return {"equation": self.equation, "dimension": self.dimension}


def _radius(xi, d):
    xi = np.asarray(xi, dtype=float)
    if d == 1 and (xi.ndim == 0 or xi.shape[-1] != 1):
        return np.abs(xi)
    return np.linalg.norm(xi, axis=-1)


def fourier_radial(kernel: Kernel, t, r):
    """``F Gamma(t)`` as a function of ``|xi|``; broadcasts over t and r."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    if kernel.equation == "heat":
        return np.exp(-4.0 * pi ** 2 * t * r * r)
    x = 2.0 * pi * r
    # sin(x t)/x, with limit t at x = 0
    return t * np.sinc(2.0 * r * t)


def green_fourier(kernel: Kernel, t: float, xi):
    if not t > 0:
        raise ValueError("t must be positive")
    out = fourier_radial(kernel, t, _radius(xi, kernel.dimension))
    return float(out) if np.ndim(out) == 0 else out


# ------------------------------------------------------------ physical form

@dataclass(frozen=True)
class PhysicalKernel:
    """Physical representation of ``Gamma(t)``.

    ``density`` maps points ``(..., d)`` to values (None for the sphere
    measure); ``sphere_radius``/``sphere_weight`` describe the d = 3 wave
    measure.  ``cell_values`` holds cell averages on a lag lattice of
    spacing ``dx`` when requested.
    """

    equation: str
    dimension: int
    t: float
    density: Callable | None
    sphere_radius: float | None = None
    sphere_weight: float | None = None
    dx: float | None = None
    cell_values: np.ndarray | None = field(default=None, repr=False)

    def cell_mass(self) -> float:
        return float(np.sum(self.cell_values) * self.dx ** self.dimension)


def _heat_density(t, d):
    def density(x):
        r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
        return (4 * pi * t) ** (-d / 2) * np.exp(-r2 / (4 * t))
    return density


def _wave_density(t, d):
    if d == 1:
        def density(x):
            x = np.asarray(x, dtype=float)[..., 0]
            return np.where(np.abs(x) < t, 0.5, 0.0)
    else:
        def density(x):
            r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
            gap = t * t - r2
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(gap > 0, 1.0 / (2 * pi * np.sqrt(np.where(gap > 0, gap, 1.0))), 0.0)
    return density


def green_physical(kernel: Kernel, t: float, dx: float | None = None,
                   lags: int | None = None) -> PhysicalKernel:
    """Density or sphere descriptor of ``Gamma(t)``; with ``dx``, also the
    cell averages on the lag lattice ``[-lags, lags]^d``."""
    if not t > 0:
        raise ValueError("t must be positive")
    d = kernel.dimension
    if kernel.equation == "heat":
        rep = dict(density=_heat_density(t, d))
    elif d == 3:
        rep = dict(density=None, sphere_radius=t, sphere_weight=1.0 / (4 * pi * t))
    else:
        rep = dict(density=_wave_density(t, d))
    cells = None
    if dx is not None:
        if lags is None:
            lags = int(ceil(kernel.effective_radius(t) / dx)) + 1
        cells = cell_kernel(kernel, t, dx, lags)
    return PhysicalKernel(kernel.equation, d, t, dx=dx, cell_values=cells, **rep)


def _wave2_G(a, b, t):
    """``int_0^a int_0^b (t^2-x^2-y^2)^-1/2 dy dx`` for (a, b) inside the disk."""
    with np.errstate(invalid="ignore", divide="ignore"):
        ra = np.sqrt(np.maximum(t * t - a * a, 0.0))
        rb = np.sqrt(np.maximum(t * t - b * b, 0.0))
        s1 = np.arcsin(np.clip(_ratio(b, ra), 0.0, 1.0))
        s2 = np.arcsin(np.clip(_ratio(a, rb), 0.0, 1.0))
        inner = np.sqrt(np.maximum(t * t - a * a - b * b, 0.0))
        return a * s1 + b * s2 - t * np.arctan2(a * b, t * inner)


def _ratio(num, den):
    # points on the rim: the ratio tends to 1 unless the numerator vanishes
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe, np.where(num > 0, 1.0, 0.0))


def _wave2_quadrant(a, b, t):
    """Same integral for arbitrary a, b >= 0 (integrand zero outside the disk)."""
    a = np.minimum(a, t)
    b = np.minimum(b, t)
    xs = np.sqrt(np.maximum(t * t - b * b, 0.0))
    head = np.minimum(a, xs)
    return _wave2_G(head, b, t) + 0.5 * pi * np.maximum(a - xs, 0.0)


def _wave2_rect(x0, x1, y0, y1, t):
    def F(a, b):
        return np.sign(a) * np.sign(b) * _wave2_quadrant(np.abs(a), np.abs(b), t)
    return (F(x1, y1) - F(x0, y1) - F(x1, y0) + F(x0, y0)) / (2 * pi)


def cell_kernel(kernel: Kernel, t: float, dx: float, lags: int) -> np.ndarray:
    """Cell averages of ``Gamma(t)`` over cells of side ``dx`` centered at
    ``k * dx`` for ``k in [-lags, lags]^d``; shape ``(2 lags + 1,)*d``.

    Cell integrals are exact (heat, wave d = 1, 2) or come from binning the
    sphere rule (wave d = 3); sum times ``dx**d`` recovers the mass.
    """
    d = kernel.dimension
    k = np.arange(-lags, lags + 1)
    lo, hi = (k - 0.5) * dx, (k + 0.5) * dx
    if kernel.equation == "heat":
        s = sqrt(2.0 * t)
        one = (ndtr(hi / s) - ndtr(lo / s)) / dx
        out = one
        for _ in range(d - 1):
            out = np.multiply.outer(out, one)
        return out
    if d == 1:
        return 0.5 * np.maximum(np.minimum(hi, t) - np.maximum(lo, -t), 0.0) / dx
    if d == 2:
        X0, Y0 = np.meshgrid(lo, lo, indexing="ij")
        X1, Y1 = np.meshgrid(hi, hi, indexing="ij")
        vals = _wave2_rect(X0, X1, Y0, Y1, t) / dx ** 2
        # cells beyond the support are exactly zero; elsewhere clear cancellation noise
        gx = np.maximum(np.maximum(X0, -X1), 0.0)
        gy = np.maximum(np.maximum(Y0, -Y1), 0.0)
        return np.where(gx * gx + gy * gy >= t * t, 0.0, np.maximum(vals, 0.0))
    dirs, w = sphere_rule(*kernel.sphere_order)
    idx = np.rint(t * dirs / dx).astype(int) + lags
    keep = np.all((idx >= 0) & (idx <= 2 * lags), axis=1)
    out = np.zeros((2 * lags + 1,) * 3)
    np.add.at(out, tuple(idx[keep].T), w[keep] * t / (4 * pi))
    return out / dx ** 3


# ---------------------------------------------------------------- J(s)

@dataclass(frozen=True)
class JValue:
    value: float
    truncated: float
    tail_bound: float


def _j_radial(kernel, model, s, quad):
    d = model.dimension
    omega = sphere_area(d)
    radius = quad.radius
    if model.kind == "tabulated":
        radius = min(radius, model.spectral_table[0][-1])
    panels = quad.panels
    if kernel.equation == "wave":
        panels = max(panels, int(ceil(4 * s * radius)))
    else:
        # Gaussian factor is negligible beyond r_eff
        r_eff = sqrt(40.0 / (8 * pi ** 2 * s))
        if r_eff < radius:
            radius = r_eff
            panels = max(64, int(ceil(panels * r_eff / quad.radius)))

    def integrand(r):
        return model.spectral_radial(r) * fourier_radial(kernel, s, r) ** 2

    truncated = omega * float(np.sum(_rw(radius, panels, quad.order, integrand, d)))
    return truncated, radius, omega


def _rw(radius, panels, order, integrand, d):
    r, w = radial_rule(radius, panels, order)
    return w * integrand(r) * r ** (d - 1)


def j_function(kernel: Kernel, model: CovarianceModel, s: float,
               quad: QuadratureSpec | None = None, detail: bool = False):
    """``J(s) = int mu(dxi) |F Gamma(s)(xi)|^2`` by radial quadrature plus tail.

    Heat tails are integrated past the Gaussian cutoff (negligible); wave
    tails split ``sin^2 = (1 - cos)/2`` and integrate the oscillatory part
    with a Fourier-weighted rule.  ``tail_bound`` bounds the neglected part.
    """
    quad = quad or QuadratureSpec()
    if kernel.dimension != model.dimension:
        raise ModelError("kernel and model dimensions differ")
    if not s > 0:
        raise ValueError("s must be positive")
    d = model.dimension
    mode = quad.resolve_tail(model)
    kind, c, p = spectral_tail(model)
    if kernel.equation == "wave" and mode == "power-law" and d - 3 - p >= -1:
        raise DivergenceError(f"J(s) diverges: integrand ~ r^{d - 3 - p:g} at infinity")
    truncated, radius, omega = _j_radial(kernel, model, s, quad)
    if model.kind == "tabulated" or mode == "none":
        result = JValue(truncated, truncated, 0.0)
    elif kernel.equation == "heat":
        # r = radius + u / sqrt(a) keeps the Gaussian decay on the unit scale
        ra = sqrt(8 * pi ** 2 * s)

        def tail_integrand(u):
            r = radius + u / ra
            return model.spectral_radial(r) * np.exp(-(ra * radius + u) ** 2) * r ** (d - 1) / ra

        tail = omega * integrate.quad(tail_integrand, 0.0, np.inf, limit=200)[0]
        result = JValue(truncated + tail, truncated, tail)
    else:
        def g(r):
            return model.spectral_radial(r) * r ** (d - 3) / (4 * pi ** 2)
        smooth = integrate.quad(g, radius, np.inf, limit=200)[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            osc = integrate.quad(g, radius, np.inf, weight="cos", wvar=4 * pi * s,
                                 limlst=200)[0]
        tail = omega * 0.5 * (smooth - osc)
        result = JValue(truncated + tail, truncated, omega * smooth)
    return result if detail else result.value


@dataclass(frozen=True)
class HypothesisAResult:
    holds: bool
    integral: float
    diagnosis: str

    def to_dict(self) -> dict:
        return {"holds": self.holds, "integral": self.integral, "diagnosis": self.diagnosis}


def _small_time_exponent(kernel, model) -> float:
    """beta with ``J(s) ~ s**-beta`` as s -> 0 (0 when J is bounded)."""
    kind, _, p = spectral_tail(model)
    if kernel.equation == "heat" and kind == "power-law":
        return max(0.0, (model.dimension - p) / 2)
    return 0.0


def time_rule(horizon: float, beta: float, order: int = 12, grading: int = 30):
    """Nodes/weights for ``int_0^T g(s) ds`` with ``g ~ s**-beta`` near 0."""
    edges = horizon * 2.0 ** -np.arange(grading, -1, -1, dtype=float)
    x, w = composite_gauss(edges, order)
    u, wu = jacobi_unit(order, -beta)
    h = edges[0]
    x0 = h * u
    w0 = h * wu * u ** beta  # g(s) = s**-beta * (s**beta g(s))
    return np.concatenate([x0, x]), np.concatenate([w0, w])


def hypothesis_a_check(kernel: Kernel, model: CovarianceModel, horizon: float,
                       quad: QuadratureSpec | None = None) -> HypothesisAResult:
    """Finiteness of ``int_0^T J(s) ds``.

    The verdict follows from exponent analysis of J near 0 and infinity,
    which reduces to the Dalang condition for both kernels; the value comes
    from graded time quadrature of ``j_function``.
    """
    quad = quad or QuadratureSpec()
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    try:
        dal = dalang_condition(model, quad)
    except InconclusiveError:
        dal = None
    if dal is not None and not dal.holds:
        return HypothesisAResult(False, float("inf"), dal.diagnosis)
    beta = _small_time_exponent(kernel, model)
    if beta >= 1:
        return HypothesisAResult(False, float("inf"), f"J(s) ~ s^-{beta:g} near 0")
    s, w = time_rule(horizon, beta)
    vals = np.array([j_function(kernel, model, si, quad) for si in s])
    total = float(np.sum(w * vals))
    return HypothesisAResult(True, total, f"J(s) ~ s^-{beta:g} near 0: integrable")


# --------------------------------------------------------- initial data

@dataclass(frozen=True)
class InitialData:
    """Initial position ``u0`` (and velocity ``v0`` for wave).

    Callables take points of shape ``(..., d)``.  Sup norms and regularity
    flags drive the admissibility checks and the a-priori bound.
    """

    dimension: int
    u0: Callable
    v0: Callable | None = None
    grad_u0: Callable | None = None
    u0_sup: float = 0.0
    v0_sup: float = 0.0
    grad_sup: float | None = None
    u0_continuous: bool = True
    v0_continuous: bool = True
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.name, "params": self.params}

    @classmethod
    def zero(cls, d: int) -> "InitialData":
        return cls.constant(0.0, d)

    @classmethod
    def constant(cls, value: float, d: int, velocity: float = 0.0) -> "InitialData":
        value, velocity = float(value), float(velocity)
        return cls(d, lambda x: np.full(np.shape(x)[:-1], value),
                   lambda x: np.full(np.shape(x)[:-1], velocity),
                   lambda x: np.zeros(np.shape(x)),
                   abs(value), abs(velocity), 0.0,
                   name="constant" if value or velocity else "zero",
                   params={"value": value, "velocity": velocity})

    @classmethod
    def gaussian_bump(cls, amplitude: float, width: float, d: int,
                      velocity: float = 0.0) -> "InitialData":
        a, w, v = float(amplitude), float(width), float(velocity)

        def u0(x):
            return a * np.exp(-np.sum(np.asarray(x) ** 2, axis=-1) / w ** 2)

        def grad(x):
            x = np.asarray(x)
            return (-2.0 / w ** 2) * x * u0(x)[..., None]

        return cls(d, u0, lambda x: np.full(np.shape(x)[:-1], v), grad,
                   abs(a), abs(v), abs(a) * sqrt(2.0) / w * np.exp(-0.5),
                   name="gaussian_bump",
                   params={"amplitude": a, "width": w, "velocity": v})

    @classmethod
    def indicator(cls, radius: float, d: int, value: float = 1.0) -> "InitialData":
        rad, val = float(radius), float(value)

        def u0(x):
            return np.where(np.linalg.norm(np.asarray(x), axis=-1) < rad, val, 0.0)

        return cls(d, u0, lambda x: np.zeros(np.shape(x)[:-1]), None,
                   abs(val), 0.0, None, u0_continuous=False,
                   name="indicator", params={"radius": rad, "value": val})

    @classmethod
    def table(cls, xs, u, v=None) -> "InitialData":
        """d = 1 samples, linearly interpolated, held constant beyond the ends."""
        xs = np.asarray(xs, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.zeros_like(u) if v is None else np.asarray(v, dtype=float)
        if xs.ndim != 1 or xs.shape != u.shape or u.shape != v.shape or np.any(np.diff(xs) <= 0):
            raise ModelError("table needs increasing abscissae and matching values")
        slopes = np.diff(u) / np.diff(xs)
        return cls(1, lambda x: np.interp(np.asarray(x)[..., 0], xs, u),
                   lambda x: np.interp(np.asarray(x)[..., 0], xs, v), None,
                   float(np.max(np.abs(u))), float(np.max(np.abs(v))),
                   float(np.max(np.abs(slopes))) if slopes.size else 0.0,
                   name="table", params={"x": xs.tolist(), "u": u.tolist(), "v": v.tolist()})


def check_regularity(kernel: Kernel, data: InitialData) -> None:
    if data.dimension != kernel.dimension:
        raise ModelError("initial data and kernel dimensions differ")
    if kernel.equation == "heat":
        return
    d = kernel.dimension
    if data.v0 is None:
        raise RegularityError("wave equation needs an initial velocity v0")
    if not data.u0_continuous:
        raise RegularityError("wave equation needs continuous u0")
    if d >= 2 and data.grad_u0 is None:
        raise RegularityError(f"wave d={d} needs u0 in C^1 with a bounded gradient")
    if d == 3 and not data.v0_continuous:
        raise RegularityError("wave d=3 needs continuous v0")


def lemma2_bound(kernel: Kernel, data: InitialData, horizon: float) -> float:
    """A-priori bound on ``sup_{t<=T, x} |I0(t, x)|`` from the data sup norms."""
    T = horizon
    if kernel.equation == "heat":
        return data.u0_sup
    g = data.grad_sup or 0.0
    if kernel.dimension == 1:
        return data.u0_sup + T * data.v0_sup
    if kernel.dimension == 2:
        return data.u0_sup + T * data.v0_sup + 0.25 * pi * T * g
    return data.u0_sup + T * g + T * data.v0_sup


def _points(x, d):
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    return x


def initial_term(kernel: Kernel, data: InitialData, t: float, x, order: int = 48):
    """``I0(t, x)``: heat convolution, d'Alembert (d=1), Poisson (d=2) or
    Kirchhoff (d=3) formula; ``x`` may be a single point or ``(..., d)``."""
    check_regularity(kernel, data)
    d = kernel.dimension
    pts = _points(x, d)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        out = data.u0(pts)
    elif kernel.equation == "heat":
        out = _heat_initial(data, t, pts, order)
    elif d == 1:
        out = _dalembert(data, t, pts)
    elif d == 2:
        out = _poisson(data, t, pts)
    else:
        out = _kirchhoff(kernel, data, t, pts)
    out = np.asarray(out, dtype=float)
    return float(out) if out.ndim == 0 else out


def _heat_initial(data, t, pts, order):
    d = data.dimension
    n = max(8, order // d) if d > 1 else order
    z, w = roots_hermite(n)
    w = w / sqrt(pi)
    z = z * sqrt(4 * t)  # exp(-|y|^2/4t) <-> exp(-z^2)
    mesh = np.stack(np.meshgrid(*([z] * d), indexing="ij"), axis=-1).reshape(-1, d)
    wts = np.prod(np.meshgrid(*([w] * d), indexing="ij"), axis=0).ravel()
    vals = data.u0(pts[..., None, :] + mesh)
    return vals @ wts


def _dalembert(data, t, pts):
    y, w = composite_gauss(np.linspace(-t, t, 33), 16)
    v = data.v0(pts[..., None, :] + y[:, None])
    left = data.u0(pts - t)
    right = data.u0(pts + t)
    return 0.5 * (left + right) + 0.5 * (v @ w)


def _disk_rule(n_psi=32, n_phi=64):
    psi, wpsi = gauss_legendre(0.0, 0.5 * pi, n_psi)
    phi = 2 * pi * np.arange(n_phi) / n_phi
    rho = np.sin(psi)
    nodes = np.stack([np.outer(rho, np.cos(phi)).ravel(),
                      np.outer(rho, np.sin(phi)).ravel()], axis=-1)
    weights = np.repeat(wpsi * rho, n_phi) * (2 * pi / n_phi)
    return nodes, weights  # weights sum to 2 pi


def _poisson(data, t, pts):
    nodes, w = _disk_rule()
    y = t * nodes
    q = pts[..., None, :] + y
    grad = np.sum(data.grad_u0(q) * y, axis=-1)
    pos = (data.u0(q) + grad) @ w / (2 * pi)
    vel = t * (data.v0(q) @ w) / (2 * pi)
    return pos + vel


def _kirchhoff(kernel, data, t, pts):
    dirs, w = sphere_rule(*kernel.sphere_order)
    q = pts[..., None, :] + t * dirs
    grad = np.sum(data.grad_u0(q) * dirs, axis=-1)
    vals = data.u0(q) + t * grad + t * data.v0(q)
    return vals @ w / (4 * pi)
