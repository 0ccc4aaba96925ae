from __future__ import annotations

import csv
from math import exp, pi, sqrt

import numpy as np
import pytest

from spdelab.covariance import CovarianceModel
from spdelab.errors import ConvergenceError, InadmissibleError, ModelError
from spdelab.grid import GridSpec
from spdelab.integrator import IntegrandProcess, walsh_integral
from spdelab.kernels import InitialData, Kernel
from spdelab.noise import sample_grid_increments
from spdelab.solver import (Coefficients, Field, sample_linear_points, solve_euler,
                            solve_linear_spectral, solve_picard, weighted_l2_norm)
from spdelab.verify import picard_contraction_report

N = 10_000
WHITE = CovarianceModel.white(1)
EXPO = CovarianceModel.exponential(1.0, 1)
HEAT = Kernel("heat", 1)
WAVE = Kernel("wave", 1)


def _within(est, target, se, k=3.0):
    return abs(est - target) <= k * se


def _variance_and_se(x):
    c = x - x.mean()
    var = np.mean(c ** 2)
    return var, sqrt((np.mean(c ** 4) - var ** 2) / x.size)


def test_linear_solution_starts_at_zero():
    fld = solve_linear_spectral(HEAT, WHITE, GridSpec(1, 2.0, 16, 1.0, 4), 0, 3)
    assert np.all(fld.values[:, 0] == 0.0)
    assert fld.values.shape == (3, 5, 16)


@pytest.mark.parametrize("kernel, model, oracle", [
    (HEAT, WHITE, 2 / sqrt(8 * pi)),
    (WAVE, EXPO, 0.25 * (1 - exp(-2.0))),
])
def test_linear_variance_matches_closed_form(kernel, model, oracle):
    grid = GridSpec(1, 8.0, 256, 1.0, 8)
    x = sample_linear_points(kernel, model, grid, 31, [[0.03125]], N)[:, -1, 0]
    var, se = _variance_and_se(x)
    assert _within(var, oracle, se)


def test_linear_solution_is_gaussian():
    grid = GridSpec(1, 8.0, 128, 1.0, 4)
    x = sample_linear_points(HEAT, WHITE, grid, 8, [[0.0625]], N)[:, -1, 0]
    c = (x - x.mean()) / x.std()
    assert _within(np.mean(c ** 3), 0.0, sqrt(6 / N))
    assert _within(np.mean(c ** 4), 3.0, sqrt(24 / N))


def test_point_sampler_matches_full_field():
    grid = GridSpec(1, 2.0, 16, 1.0, 4)
    fld = solve_linear_spectral(WAVE, EXPO, grid, 5, 7)
    pts = sample_linear_points(WAVE, EXPO, grid, 5, grid.centers[[3, 9]], 7, chunk=3)
    assert np.allclose(pts, fld.values[:, :, [3, 9]], atol=1e-12)


def test_inadmissible_noise_is_rejected():
    grid = GridSpec(2, 2.0, 8, 1.0, 4)
    with pytest.raises(InadmissibleError):
        solve_linear_spectral(Kernel("heat", 2), CovarianceModel.white(2), grid, 0)


def _picard_setup(kernel=HEAT, steps=8, points=32, half_width=4.0, replicates=4):
    grid = GridSpec(1, half_width, points, 1.0, steps, window=1.0)
    noise = sample_grid_increments(WHITE, grid, 17, replicates)
    return grid, noise


def test_picard_without_noise_returns_initial_term():
    grid, noise = _picard_setup()
    coeffs = Coefficients.from_specs({"name": "zero"}, {"name": "zero"})
    fld = solve_picard(HEAT, WHITE, grid, coeffs, InitialData.constant(2.0, 1), noise)
    assert fld.log == (0.0,)
    assert np.allclose(fld.values, 2.0)


def test_picard_with_unit_noise_is_the_stochastic_convolution():
    grid, noise = _picard_setup()
    fld = solve_picard(HEAT, WHITE, grid, Coefficients.linear_noise(), InitialData.zero(1), noise)
    assert len(fld.log) == 2 and fld.log[-1] == 0.0
    one = IntegrandProcess.constant_value(1.0)
    for i in (16, 20):
        x = grid.centers[i]
        assert np.allclose(fld.at(1.0, x), walsh_integral(noise, one, 1.0, x, HEAT), atol=1e-12)


def test_picard_contracts_for_small_lipschitz_constant():
    grid, noise = _picard_setup()
    coeffs = Coefficients.from_specs({"name": "linear", "c": 0.1}, {"name": "zero"})
    fld = solve_picard(HEAT, WHITE, grid, coeffs, InitialData.constant(1.0, 1), noise, rtol=1e-12)
    rep = picard_contraction_report(fld.log)
    assert rep["verdict"] == "pass" and rep["ratio"] < 1


def test_picard_reports_its_log_when_it_gives_up():
    grid, noise = _picard_setup()
    coeffs = Coefficients.from_specs({"name": "linear", "c": 1.0}, {"name": "zero"})
    with pytest.raises(ConvergenceError) as err:
        solve_picard(HEAT, WHITE, grid, coeffs, InitialData.constant(1.0, 1), noise, max_iter=2)
    assert len(err.value.log) == 2 and all(m > 0 for m in err.value.log)


@pytest.mark.parametrize("kernel", [HEAT, WAVE])
def test_euler_march_equals_picard_fixed_point(kernel):
    grid, noise = _picard_setup(kernel, half_width=2.5)
    coeffs = Coefficients.from_specs({"name": "sine", "amplitude": 0.5},
                                     {"name": "affine", "slope": -0.5, "intercept": 0.25})
    data = InitialData.constant(1.0, 1)
    a = solve_picard(kernel, WHITE, grid, coeffs, data, noise, rtol=1e-13)
    b = solve_euler(kernel, WHITE, grid, coeffs, data, noise)
    assert np.allclose(a.values, b.values, atol=1e-10)


def test_unit_drift_without_noise_gives_elapsed_time():
    grid = GridSpec(1, 8.0, 64, 1.0, 8, window=1.0)
    noise = sample_grid_increments(WHITE, grid, 0, 1)
    coeffs = Coefficients.from_specs({"name": "zero"}, {"name": "one"})
    fld = solve_picard(HEAT, WHITE, grid, coeffs, InitialData.zero(1), noise)
    mid = fld.values[0, :, 30:34]
    assert np.allclose(mid, grid.times[:, None], atol=1e-9)


def test_wave_solver_needs_room_for_the_light_cone():
    grid = GridSpec(1, 1.5, 12, 1.0, 4, window=1.0)
    noise = sample_grid_increments(WHITE, grid, 0, 1)
    with pytest.raises(ModelError):
        solve_picard(WAVE, WHITE, grid, Coefficients.linear_noise(), InitialData.zero(1), noise)


def test_noise_grid_must_match():
    grid, noise = _picard_setup()
    other = GridSpec(1, 4.0, 16, 1.0, 8)
    with pytest.raises(ModelError):
        solve_picard(HEAT, WHITE, other, Coefficients.linear_noise(), InitialData.zero(1), noise)


def _constant_field(grid, value=1.0):
    return Field(np.full((1, grid.steps + 1) + grid.shape, value), grid)


def test_weighted_norms():
    L = 6.0
    grid = GridSpec(1, L, 1200, 1.0, 1)
    assert np.all(weighted_l2_norm(_constant_field(grid, 0.0), "vartheta") == 0.0)
    one = _constant_field(grid)
    assert weighted_l2_norm(one, "vartheta")[0, 0] == pytest.approx(2 * (1 - exp(-L)), rel=1e-5)
    assert weighted_l2_norm(one, "theta", k=2)[0, 0] == pytest.approx(4 - 2 / L, rel=1e-5)
    window = GridSpec(1, L, 1200, 1.0, 1, window=1.0)
    assert weighted_l2_norm(_constant_field(window), "theta", k=2)[0, 0] == pytest.approx(2.0)
    with pytest.raises(ModelError):
        weighted_l2_norm(one, "theta", k=1)
    with pytest.raises(ModelError):
        weighted_l2_norm(one, "theta")
    with pytest.raises(ModelError):
        weighted_l2_norm(one, "bogus")


def test_coefficients_catalog():
    table = Coefficients.from_specs({"name": "custom-table", "x": [0, 1, 2], "y": [0, 2, 1]},
                                    {"name": "affine", "slope": 3, "intercept": 1})
    assert table.sigma_lipschitz == 2.0 and table.b_lipschitz == 3.0
    assert table.check_lipschitz()
    assert Coefficients.from_dict(table.to_dict()) == table
    assert np.allclose(table.sigma(np.array([-1.0, 0.5, 5.0])), [0.0, 1.0, 1.0])
    with pytest.raises(ModelError):
        Coefficients.from_specs({"name": "cubic"}, {"name": "zero"})
    with pytest.raises(ModelError):
        Coefficients.from_specs({"name": "custom-table", "x": [1, 0], "y": [0, 1]}, {"name": "zero"})


def test_field_rejects_non_finite_values():
    grid = GridSpec(1, 1.0, 4, 1.0, 1)
    with pytest.raises(ModelError):
        Field(np.full((1, 2, 4), np.nan), grid)


def test_field_save_load_and_csv(tmp_path):
    grid = GridSpec(1, 2.0, 8, 1.0, 2)
    fld = solve_linear_spectral(HEAT, EXPO, grid, 3, 2)
    fld.save(tmp_path / "f.bin")
    back = Field.load(tmp_path / "f.bin")
    assert np.array_equal(back.values, fld.values)
    assert back.grid == grid and back.provenance == fld.provenance
    fld.export_csv(tmp_path / "f.csv", replicate=1)
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["t", "x1", "u"] and len(rows) == 1 + 3 * 8
    assert float(rows[-1][2]) == fld.values[1, -1, -1]


def test_linear_field_is_mean_square_continuous():
    grid = GridSpec(1, 4.0, 128, 1.0, 4)
    u = solve_linear_spectral(HEAT, WHITE, grid, 2, 400).values[:, -1]
    msd = [np.mean((np.roll(u, -h, axis=1) - u) ** 2) for h in (8, 4, 2, 1)]
    assert all(a > b for a, b in zip(msd, msd[1:]))
    assert msd[-1] < 0.2 * msd[0]
