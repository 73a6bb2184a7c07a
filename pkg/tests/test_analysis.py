import csv
import json
import math

import numpy as np
import pytest

from tfrmt.analysis import (
    ComparisonReport,
    EnsembleSlices,
    branch_lag,
    compare_slices,
    compare_variances,
    finale_mask,
    jackknife,
    log_decay_slope,
    mixing_depth_profile,
    power_law_fit,
    traces,
    variance_ratio_table,
    write_depth_profile_csv,
    write_traces_csv,
)
from tfrmt.rmt import VarianceProfile
from tfrmt.timefront import IntensityGrid


def _grid(values, members=1):
    nz, nt = values.shape
    return IntensityGrid(values, np.linspace(0.0, 5.0, nz), np.linspace(-1.0, 1.0, nt), 50.0, members)


def _pulse(nt, centre, width=2.0):
    return np.exp(-0.5 * ((np.arange(nt) - centre) / width) ** 2)


def test_traces_use_nearest_depth_and_record_offset():
    grid = _grid(np.arange(51 * 9, dtype=float).reshape(51, 9) + 1.0)
    table = traces(grid, [0.5, 1.03])
    np.testing.assert_allclose(table.depths, [0.5, 1.0])
    np.testing.assert_allclose(table.offsets, [0.0, -0.03], atol=1e-12)
    np.testing.assert_array_equal(table.linear[1], grid.values[10])


def test_constant_grid_gives_constant_trace(tmp_path):
    grid = _grid(np.full((11, 7), 2.5))
    table = traces(grid, [1.5])
    assert np.all(table.linear == 2.5)
    assert np.all(table.db == 0.0)
    path = write_traces_csv(tmp_path / "t.csv", table)
    with path.open(encoding="utf-8") as handle:
        rows = list(csv.DictReader(handle))
    assert len(rows) == 7
    assert {row["intensity_db"] for row in rows} == {"0.000000"}


def test_trace_outside_window_rejected():
    with pytest.raises(ValueError):
        traces(_grid(np.ones((11, 3))), [6.0])


def test_log_decay_slope_of_exponential():
    x = np.linspace(1.0, 3.0, 21)
    fit = log_decay_slope(x, 4.0 * np.exp(-2.5 * x))
    assert fit.slope == pytest.approx(-2.5)
    assert fit.points == 21


def test_power_law_fit_recovers_exponent():
    x = np.arange(1, 11, dtype=float)
    fit = power_law_fit(x, 3.0 * x**-1.7)
    assert fit.exponent == pytest.approx(-1.7)
    assert fit.prefactor == pytest.approx(3.0)
    assert fit.r_squared == pytest.approx(1.0)


def test_branch_lag_finds_shift():
    reference = _pulse(64, 20)
    assert branch_lag(_pulse(64, 23), reference) == 3
    assert branch_lag(_pulse(64, 18), reference) == -2
    assert branch_lag(np.ones(64), reference) == 0


def test_jackknife_of_mean_is_standard_error():
    samples = np.random.default_rng(0).normal(size=50)
    estimate, error = jackknife(samples, np.mean)
    assert estimate == pytest.approx(samples.mean())
    assert error == pytest.approx(samples.std(ddof=1) / math.sqrt(50))


def test_variance_ratio_table_band_and_ratios():
    M, N = 16, 400
    rng = np.random.default_rng(1)
    s = 0.01 * np.exp(-np.abs(np.subtract.outer(np.arange(M), np.arange(M))) / 3.0)
    profile = VarianceProfile(k=1.0, r_b=50.0, s=s)
    noise = (rng.standard_normal((N, M, M)) + 1j * rng.standard_normal((N, M, M))) / math.sqrt(2.0)
    samples = 2.0 * s * noise
    rows = variance_ratio_table(samples, samples, profile, max_offset=4, m_min=5)
    assert {row.m for row in rows} == set(range(5, 9))
    assert all(1 <= row.offset <= 4 for row in rows)
    assert np.median([row.pe_ratio for row in rows]) == pytest.approx(1.0, abs=0.1)

    report = compare_variances(ComparisonReport(range_km=50.0, members={"pe": N, "rmt": N}, K=1), samples, samples, profile)
    assert report.band_fits["analytic"]["exponent"] < 0
    assert report.band_fits["analytic"]["exponent_err"] == 0.0
    assert report.band_fits["pe"]["exponent_err"] > 0.0
    assert report.band_fits["pe"]["exponent_err"] < abs(report.band_fits["pe"]["exponent"])
    assert set(report.band_fits["rmt"]) >= {"prefactor_err", "r_squared_err"}
    assert report.variance_table


def test_band_fit_errors_need_three_members():
    M = 16
    s = 0.01 * np.exp(-np.abs(np.subtract.outer(np.arange(M), np.arange(M))) / 3.0)
    profile = VarianceProfile(k=1.0, r_b=50.0, s=s)
    rng = np.random.default_rng(2)
    samples = 2.0 * s * (rng.standard_normal((2, M, M)) + 1j * rng.standard_normal((2, M, M)))
    report = compare_variances(ComparisonReport(range_km=50.0, members={"pe": 2, "rmt": 2}, K=1), samples, samples, profile)
    assert report.band_fits["pe"]["exponent_err"] is None
    assert report.band_fits["analytic"]["exponent_err"] == 0.0
    json.dumps(report.to_dict())


def test_mixing_depth_profile_takes_zero_delay_column(tmp_path):
    z = np.linspace(0.0, 5.0, 51)
    tau = np.linspace(-1.0, 1.0, 5)
    slow = np.exp(-0.5 * z)[:, None] * np.ones(5)
    fast = np.exp(-2.0 * z)[:, None] * np.ones(5)
    slow[:, 0] = 99.0
    grids = {
        "prediction": IntensityGrid(slow, z, tau, 1000.0, 100),
        "unperturbed": IntensityGrid(fast, z, tau, 1000.0, 1),
    }
    profile = mixing_depth_profile(grids, fit_window=(1.0, 3.0))
    np.testing.assert_array_equal(profile.curves["prediction"], slow[:, 2])
    assert profile.fits["prediction"].slope == pytest.approx(-0.5)
    assert abs(profile.fits["prediction"].slope) < abs(profile.fits["unperturbed"].slope)
    path = write_depth_profile_csv(tmp_path / "depth.csv", profile)
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "z_km,prediction,unperturbed"


def test_depth_profile_rejects_mismatched_grids():
    a = _grid(np.ones((5, 3)))
    b = IntensityGrid(np.ones((5, 3)), a.z + 0.1, a.tau, 50.0, 1)
    with pytest.raises(ValueError):
        mixing_depth_profile({"a": a, "b": b})


def test_finale_mask_selects_quiet_cells_inside_arrivals():
    values = np.zeros((11, 9))
    values[3, 2] = 1.0
    values[3, 6] = 1.0
    mask = finale_mask(_grid(values))
    assert mask[3, 4] and mask[0, 4]
    assert not mask[3, 2]
    assert not mask[3, 0] and not mask[3, 8]


def _slices(order, members):
    slices = EnsembleSlices()
    for i in order:
        intensity = members[i]
        slices.add(intensity, np.array([10, 20]), 16, 10, intensity < 0.01, float(intensity.sum()), 0.1 + i)
    return slices


def test_compare_statistics_ignore_member_order():
    rng = np.random.default_rng(3)
    z = np.linspace(0.0, 5.0, 51)
    tau = np.linspace(-1.0, 1.0, 33)
    shape = np.exp(-z)[:, None] * _pulse(33, 16, 4.0)[None, :]
    members = [shape * (1.0 + 0.1 * rng.random(shape.shape)) for _ in range(6)]
    order = [5, 2, 0, 4, 1, 3]
    first = compare_slices(ComparisonReport(50.0, {"pe": 6, "rmt": 6}, 33), _slices(range(6), members),
                           _slices(range(6), members), z, tau, z[[10, 20]])
    second = compare_slices(ComparisonReport(50.0, {"pe": 6, "rmt": 6}, 33), _slices(order, members),
                            _slices(order, members), z, tau, z[[10, 20]])
    for name in ("pe", "rmt"):
        for key, value in first.finale[name].items():
            assert value == pytest.approx(second.finale[name][key])
    assert [row["lag_cells"] for row in first.branch_lags] == [row["lag_cells"] for row in second.branch_lags]
    assert first.finale["rmt"]["depth_slope_per_km"] == pytest.approx(-1.0, abs=0.05)
    assert first.branch_lags[0]["lag_cells"] == 0
    assert first.background["pe"]["mean"] == pytest.approx(second.background["pe"]["mean"])
    assert first.energy_spread == pytest.approx(second.energy_spread)
    assert first.energy_spread_err > 0.0
    assert first.energy_spread_err == pytest.approx(second.energy_spread_err)
    assert first.runtimes["pe_per_member_s"] == pytest.approx(2.6)
    assert first.runtimes["pe_per_member_s_err"] == pytest.approx(np.std(0.1 + np.arange(6), ddof=1) / math.sqrt(6))
    assert first.runtimes["pe_over_rmt"] == pytest.approx(1.0)
    assert first.runtimes["pe_over_rmt_err"] > 0.0
