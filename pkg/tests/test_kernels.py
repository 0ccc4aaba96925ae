from __future__ import annotations

from math import asin, exp, pi, sqrt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from spdelab.covariance import CovarianceModel, QuadratureSpec, dalang_condition
from spdelab.errors import DivergenceError, ModelError, RegularityError
from spdelab.kernels import (InitialData, Kernel, cell_kernel, green_fourier, green_physical,
                             hypothesis_a_check, initial_term, j_function, lemma2_bound)

KERNELS = [Kernel(eq, d) for eq in ("heat", "wave") for d in (1, 2, 3)]


def test_green_fourier_examples():
    assert green_fourier(Kernel("heat", 1), 1.0, 0.0) == 1.0
    assert green_fourier(Kernel("wave", 2), 0.25, [1.0, 0.0]) == pytest.approx(1 / (2 * pi))
    assert green_fourier(Kernel("wave", 3), 2.0, [0.0, 0.0, 0.0]) == pytest.approx(2.0)
    assert green_fourier(Kernel("heat", 2), 0.5, [0.3, 0.4]) == \
        pytest.approx(exp(-4 * pi ** 2 * 0.5 * 0.25))


def test_wave_d4_rejected():
    with pytest.raises(ModelError, match="d in"):
        Kernel("wave", 4)
    Kernel("heat", 4)


def test_green_physical_examples():
    w1 = green_physical(Kernel("wave", 1), 1.0)
    assert w1.density(np.array([[0.3], [0.99], [1.01], [-2.0]])).tolist() == [0.5, 0.5, 0, 0]
    h2 = green_physical(Kernel("heat", 2), 0.5)
    assert h2.density(np.zeros(2)) == pytest.approx(1 / (2 * pi))
    w3 = green_physical(Kernel("wave", 3), 2.0)
    assert w3.density is None
    assert w3.sphere_radius == 2.0
    assert w3.sphere_weight == pytest.approx(1 / (8 * pi))
    assert w3.sphere_weight * 4 * pi * w3.sphere_radius ** 2 == pytest.approx(2.0)


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: f"{k.equation}{k.dimension}")
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0])
def test_mass_identity(kernel, t):
    dx = {1: 0.01, 2: 0.05, 3: 0.1}[kernel.dimension]
    phys = green_physical(kernel, t, dx=dx)
    assert phys.cell_mass() == pytest.approx(green_fourier(kernel, t, np.zeros(kernel.dimension)),
                                             rel=1e-6)
    assert np.all(phys.cell_values >= 0)


@pytest.mark.parametrize("kernel", [k for k in KERNELS if k.equation == "wave"],
                         ids=lambda k: f"wave{k.dimension}")
def test_finite_propagation(kernel):
    t, dx = 0.8, 0.1
    assert kernel.support_radius(t) == t
    vals = cell_kernel(kernel, t, dx, 12)
    k = np.arange(-12, 13) * dx
    mesh = np.meshgrid(*([k] * kernel.dimension), indexing="ij")
    nearest = np.sqrt(sum(np.maximum(np.abs(m) - dx / 2, 0) ** 2 for m in mesh))
    assert np.all(vals[nearest > t + 1e-12] == 0.0)


def _arc_inside(r, x0, x1, y0, y1):
    """Angle of the circle of radius r inside the rectangle (exact event angles)."""
    cuts = [0.0, 2 * pi]
    for c in (x0, x1):
        if abs(c) <= r:
            a = np.arccos(c / r)
            cuts += [a % (2 * pi), (-a) % (2 * pi)]
    for c in (y0, y1):
        if abs(c) <= r:
            a = np.arcsin(c / r)
            cuts += [a % (2 * pi), (pi - a) % (2 * pi)]
    cuts = np.sort(cuts)
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        m = 0.5 * (a + b)
        px, py = r * np.cos(m), r * np.sin(m)
        if x0 <= px <= x1 and y0 <= py <= y1:
            total += b - a
    return total


def _wave2_cell_oracle(x0, x1, y0, y1, t):
    # r = t sin(psi) removes the rim singularity: dr / sqrt(t^2 - r^2) = dpsi
    f = lambda psi: t * np.sin(psi) * _arc_inside(t * np.sin(psi), x0, x1, y0, y1) / (2 * pi)  # noqa: E731
    return integrate.quad(f, 0, pi / 2, limit=400, epsabs=1e-11)[0]


@pytest.mark.parametrize("cell", [(0, 0), (3, 2), (5, 0), (4, 3), (6, 1), (2, -5)])
def test_wave2_cell_averages_match_polar_quadrature(cell):
    t, dx = 0.55, 0.1
    vals = cell_kernel(Kernel("wave", 2), t, dx, 7)
    i, j = cell
    x0, x1 = (i - 0.5) * dx, (i + 0.5) * dx
    y0, y1 = (j - 0.5) * dx, (j + 0.5) * dx
    want = _wave2_cell_oracle(x0, x1, y0, y1, t) / dx ** 2
    assert vals[i + 7, j + 7] == pytest.approx(want, rel=1e-6, abs=1e-10)


def test_heat_cell_average_is_cdf_difference():
    vals = cell_kernel(Kernel("heat", 1), 0.3, 0.2, 5)
    want = integrate.quad(lambda x: np.exp(-x * x / 1.2) / sqrt(1.2 * pi), 0.1, 0.3)[0] / 0.2
    assert vals[6] == pytest.approx(want, rel=1e-12)


# ----------------------------------------------------------------- J(s)

def test_j_function_examples():
    white = CovarianceModel.white(1)
    assert j_function(Kernel("heat", 1), white, 1.0) == pytest.approx((8 * pi) ** -0.5, rel=1e-8)
    assert j_function(Kernel("wave", 1), white, 1.0) == pytest.approx(0.5, rel=1e-8)
    assert j_function(Kernel("wave", 1), white, 0.3) == pytest.approx(0.15, rel=1e-8)


def test_j_function_small_time_behaviour():
    heat1, heat2 = Kernel("heat", 1), Kernel("heat", 2)
    s = np.array([1e-2, 1e-4, 1e-6])
    sj1 = [si * j_function(heat1, CovarianceModel.white(1), si) for si in s]
    sj2 = [si * j_function(heat2, CovarianceModel.white(2), si) for si in s]
    # d = 1: J ~ s^-1/2 is integrable at 0; d = 2: J ~ 1/(8 pi s) is not
    assert sj1[0] > sj1[1] > sj1[2]
    assert sj1[2] < 1e-3
    assert sj2 == pytest.approx([1 / (8 * pi)] * 3, rel=1e-8)


def test_j_function_matches_direct_quadrature_for_exponential():
    model = CovarianceModel.exponential(1.0, 1)
    for s in (0.2, 1.0):
        direct = 2 * integrate.quad(
            lambda r: 2 / (1 + 4 * pi ** 2 * r * r) * (np.sin(2 * pi * s * r) / (2 * pi * r)) ** 2,
            0, np.inf, limit=2000)[0]
        assert j_function(Kernel("wave", 1), model, s) == pytest.approx(direct, rel=1e-6)


def test_j_function_divergence():
    with pytest.raises(DivergenceError):
        j_function(Kernel("wave", 3), CovarianceModel.riesz(2.5, 3), 1.0)


def test_j_detail_reports_tail():
    res = j_function(Kernel("wave", 1), CovarianceModel.white(1), 1.0, detail=True)
    assert res.value == pytest.approx(res.truncated + (res.value - res.truncated))
    assert res.tail_bound >= abs(res.value - res.truncated)


# ----------------------------------------------------------- Hypothesis A

def test_hypothesis_a_examples():
    white = CovarianceModel.white(1)
    wave = hypothesis_a_check(Kernel("wave", 1), white, 1.0)
    heat = hypothesis_a_check(Kernel("heat", 1), white, 1.0)
    assert wave.holds and wave.integral == pytest.approx(0.25, rel=1e-8)
    assert heat.holds and heat.integral == pytest.approx(2 * (8 * pi) ** -0.5, rel=1e-8)
    bad = hypothesis_a_check(Kernel("wave", 3), CovarianceModel.riesz(2.5, 3), 1.0)
    assert not bad.holds and bad.integral == float("inf")


def _catalog(d):
    out = [CovarianceModel.white(d), CovarianceModel.exponential(1.0, d),
           CovarianceModel.gaussian(1.0, d)]
    out += [CovarianceModel.riesz(a, d) for a in (0.5, 1.5, 2.5) if a < d]
    return out


@pytest.mark.parametrize("kernel", KERNELS, ids=lambda k: f"{k.equation}{k.dimension}")
def test_hypothesis_a_agrees_with_dalang(kernel):
    quad = QuadratureSpec(radius=200.0, panels=800)
    for model in _catalog(kernel.dimension):
        hyp = hypothesis_a_check(kernel, model, 1.0, quad)
        assert hyp.holds == dalang_condition(model, quad).holds, model
        if hyp.holds:
            assert np.isfinite(hyp.integral) and hyp.integral > 0


# --------------------------------------------------------- initial terms

def _quadratic_data(d, velocity=False):
    """u0 = y_1^2 (or v0 = y_1 when ``velocity``), as custom data."""
    zero = lambda x: np.zeros(np.shape(x)[:-1])  # noqa: E731
    if velocity:
        return InitialData(d, zero, lambda x: np.asarray(x)[..., 0],
                           lambda x: np.zeros(np.shape(x)))
    def grad(x):
        g = np.zeros(np.shape(x))
        g[..., 0] = 2 * np.asarray(x)[..., 0]
        return g
    return InitialData(d, lambda x: np.asarray(x)[..., 0] ** 2, zero, grad)


@pytest.mark.parametrize("d", [1, 3])
def test_wave_unit_velocity_gives_t(d):
    data = InitialData.constant(0.0, d, velocity=1.0)
    x = np.random.default_rng(0).normal(size=(4, d))
    for t in (0.1, 1.0, 2.0):
        assert np.allclose(initial_term(Kernel("wave", d), data, t, x), t, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_heat_constant_is_preserved(d):
    x = np.random.default_rng(1).normal(size=(4, d))
    out = initial_term(Kernel("heat", d), InitialData.constant(-1.5, d), 0.7, x)
    assert np.allclose(out, -1.5, atol=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_wave_quadratic_position_solves_equation(d):
    # u = x_1^2 + t^2 solves u_tt = lap u with u(0) = x_1^2, u_t(0) = 0
    x = np.random.default_rng(2).normal(size=(5, d))
    for t in (0.3, 1.1):
        out = initial_term(Kernel("wave", d), _quadratic_data(d), t, x)
        assert np.allclose(out, x[:, 0] ** 2 + t * t, atol=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_wave_linear_velocity_solves_equation(d):
    x = np.random.default_rng(3).normal(size=(5, d))
    out = initial_term(Kernel("wave", d), _quadratic_data(d, velocity=True), 0.8, x)
    assert np.allclose(out, 0.8 * x[:, 0], atol=1e-10)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_heat_quadratic_solves_equation(d):
    x = np.random.default_rng(4).normal(size=(5, d))
    out = initial_term(Kernel("heat", d), _quadratic_data(d), 0.6, x)
    assert np.allclose(out, x[:, 0] ** 2 + 1.2, atol=1e-10)


def test_heat_gaussian_bump_closed_form():
    data = InitialData.gaussian_bump(2.0, 1.0, 1)
    t, x = 0.4, np.array([0.0, 0.5, -1.3])
    want = 2.0 / np.sqrt(1 + 4 * t) * np.exp(-x ** 2 / (1 + 4 * t))
    assert np.allclose(initial_term(Kernel("heat", 1), data, t, x), want, rtol=1e-10)


def test_initial_term_at_time_zero_is_u0():
    data = InitialData.gaussian_bump(1.0, 0.5, 2)
    x = np.array([[0.1, 0.2], [1.0, -0.3]])
    assert np.array_equal(initial_term(Kernel("wave", 2), data, 0.0, x), data.u0(x))


def test_regularity_violations():
    with pytest.raises(RegularityError):
        initial_term(Kernel("wave", 1), InitialData.indicator(1.0, 1), 0.5, 0.0)
    no_grad = InitialData(2, lambda x: np.zeros(np.shape(x)[:-1]),
                          lambda x: np.zeros(np.shape(x)[:-1]))
    with pytest.raises(RegularityError):
        initial_term(Kernel("wave", 2), no_grad, 0.5, [0.0, 0.0])
    # heat only needs bounded measurable data
    assert initial_term(Kernel("heat", 1), InitialData.indicator(1.0, 1), 1e-4, 0.0) == \
        pytest.approx(1.0)


def test_table_data_dalembert():
    data = InitialData.table([-5, 0, 5], [0, 1, 0])
    # triangle profile: mean of the two shifted values
    assert initial_term(Kernel("wave", 1), data, 1.0, 0.0) == pytest.approx(0.8)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0.3, 2.0), st.floats(-1.0, 1.0), st.floats(0.05, 2.0),
       st.sampled_from(KERNELS))
def test_initial_term_respects_a_priori_bound(amplitude, width, velocity, t, kernel):
    d = kernel.dimension
    data = InitialData.gaussian_bump(amplitude, width, d, velocity)
    x = np.random.default_rng(5).uniform(-2, 2, size=(6, d))
    vals = initial_term(kernel, data, t, x)
    assert np.max(np.abs(vals)) <= lemma2_bound(kernel, data, t) * (1 + 1e-9)
