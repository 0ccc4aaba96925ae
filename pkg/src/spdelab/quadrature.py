"""Fixed-node quadrature rules used by the covariance and kernel modules."""

from __future__ import annotations

from functools import lru_cache
from math import gamma, pi

import numpy as np
from scipy.special import roots_jacobi


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d (2 for d=1)."""
    return 2.0 * pi ** (d / 2) / gamma(d / 2)


@lru_cache(maxsize=None)
def _leggauss(order: int) -> tuple[np.ndarray, np.ndarray]:
    return np.polynomial.legendre.leggauss(order)


def gauss_legendre(a: float, b: float, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = _leggauss(order)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def composite_gauss(edges: np.ndarray, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre on every panel ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    return (lo + half * (x + 1.0)).ravel(), (half * w).ravel()


def radial_rule(radius: float, panels: int, order: int = 16,
                grading: int = 60, knee: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Nodes/weights on ``[0, radius]``.

    Geometrically graded panels ``knee * 2**-k`` resolve integrable
    algebraic singularities at the origin; the rest is uniform.
    """
    knee = min(knee, radius)
    graded = knee * 2.0 ** -np.arange(grading, 0, -1, dtype=float)
    graded = np.concatenate([[0.0], graded, [knee]])
    edges = [graded]
    if radius > knee:
        edges.append(np.linspace(knee, radius, max(panels, 1) + 1)[1:])
    return composite_gauss(np.concatenate(edges), order)


@lru_cache(maxsize=None)
def jacobi_unit(order: int, beta: float) -> tuple[np.ndarray, np.ndarray]:
    """Rule for ``int_0^1 r**beta g(r) dr`` (Gauss-Jacobi mapped to [0, 1])."""
    x, w = roots_jacobi(order, 0.0, beta)
    return 0.5 * (x + 1.0), w * 2.0 ** (-beta - 1.0)


@lru_cache(maxsize=None)
def sphere_rule(n_theta: int = 32, n_phi: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions in R^3 and weights summing to 4*pi.

    Gauss-Legendre in cos(colatitude), uniform (trapezoid) in longitude.
    """
    c, wc = _leggauss(n_theta)
    phi = 2.0 * pi * np.arange(n_phi) / n_phi
    s = np.sqrt(1.0 - c ** 2)
    dirs = np.stack([
        np.outer(s, np.cos(phi)).ravel(),
        np.outer(s, np.sin(phi)).ravel(),
        np.repeat(c, n_phi),
    ], axis=-1)
    weights = np.repeat(wc, n_phi) * (2.0 * pi / n_phi)
    return dirs, weights


def duffy_cube(func, corner: np.ndarray, signs: np.ndarray, side: float,
               beta: float, order: int = 12) -> float:
    """Integrate ``func(points)`` over a cube with a weak singularity at a corner.

    The cube is ``corner + side * signs * [0,1]^d``.  It is split into d
    pyramids; in each, the radial coordinate carries the Jacobian
    ``rho**(d-1)`` times the singular factor, integrated by Gauss-Jacobi with
    exponent ``beta`` (``d - 1 - alpha`` for an ``|x|**-alpha`` singularity).
    """
    d = corner.size
    rho, wr = jacobi_unit(order, float(beta))
    total = 0.0
    if d == 1:
        pts = corner + side * signs * rho[:, None]
        return float(side * np.sum(wr * func(pts) * rho ** (-beta)))
    # remaining coordinates as fractions of rho
    t, wt = gauss_legendre(0.0, 1.0, order)
    grids = np.meshgrid(*([t] * (d - 1)), indexing="ij")
    wgrid = np.prod(np.meshgrid(*([wt] * (d - 1)), indexing="ij"), axis=0).ravel()
    frac = np.stack([g.ravel() for g in grids], axis=-1)
    for k in range(d):
        v = np.empty((rho.size, frac.shape[0], d))
        others = [j for j in range(d) if j != k]
        v[:, :, k] = rho[:, None]
        v[:, :, others] = rho[:, None, None] * frac[None, :, :]
        pts = corner + side * signs * v
        vals = func(pts.reshape(-1, d)).reshape(rho.size, -1)
        # Jacobian side**d * rho**(d-1); rho**beta already in the rule
        jac = side ** d * rho ** (d - 1 - beta)
        total += float(np.sum(wr[:, None] * wgrid[None, :] * jac[:, None] * vals))
    return total
