import numpy as np
import pytest

from tfrmt.config import InternalWaveParams
from tfrmt.environment import (
    EnvModel,
    IWRealization,
    buoyancy,
    eval_perturbation,
    iw_mode_profile,
    munk_potential,
    sample_iw_realization,
    vertical_structure,
)
from tfrmt.errors import GridMismatchError


def test_munk_potential_vanishes_on_axis_and_grows_away(waveguide):
    z = np.linspace(-1.0, 5.0, 601)
    v0 = munk_potential(z, waveguide)
    assert munk_potential(waveguide.z_a, waveguide) == pytest.approx(0.0, abs=1e-15)
    assert np.all(v0 >= 0.0)
    assert z[np.argmin(v0)] == pytest.approx(waveguide.z_a, abs=0.01)


def test_realization_is_deterministic_per_seed(internal_waves):
    first = sample_iw_realization(3, internal_waves)
    again = sample_iw_realization(3, internal_waves)
    other = sample_iw_realization(4, internal_waves)
    assert np.array_equal(first.phases, again.phases)
    assert not np.array_equal(first.phases, other.phases)
    assert np.all((first.phases >= 0.0) & (first.phases < 2.0 * np.pi))


def test_phase_depends_only_on_seed_and_indices(internal_waves):
    wide = sample_iw_realization(5, internal_waves)
    narrow = sample_iw_realization(5, InternalWaveParams(j_max=4, l_max=internal_waves.l_max))
    assert np.array_equal(narrow.phases, wide.phases[:4])


def test_realization_from_dict_rejects_other_dimensions(internal_waves):
    record = sample_iw_realization(1, internal_waves).to_dict()
    assert np.array_equal(IWRealization.from_dict(record, internal_waves).phases,
                          sample_iw_realization(1, internal_waves).phases)
    with pytest.raises(GridMismatchError):
        IWRealization.from_dict(record, InternalWaveParams(j_max=3, l_max=64))


def test_perturbation_matches_mode_sum(waveguide, internal_waves):
    rz = sample_iw_realization(9, internal_waves)
    z = np.array([0.5, 1.0, 2.5])
    r = 3.7
    expected = np.zeros_like(z)
    for j in range(1, internal_waves.j_max + 1):
        for l, k_l in enumerate(internal_waves.kl_grid):
            profile = iw_mode_profile(j, k_l, z, waveguide, internal_waves)
            expected += profile * np.cos(rz.phases[j - 1, l] + k_l * r)
    actual = eval_perturbation(rz, z, r, waveguide, internal_waves)
    np.testing.assert_allclose(actual, expected, rtol=1e-10, atol=1e-15)


def test_perturbation_is_weak_and_surface_intensified(waveguide, internal_waves):
    env = EnvModel(waveguide, internal_waves, sample_iw_realization(2, internal_waves))
    z = np.linspace(0.0, 4.0, 81)
    samples = np.stack([env.perturbation(z, r) for r in np.linspace(0.0, 50.0, 51)])
    rms = np.sqrt(np.mean(samples**2, axis=0))
    assert 1e-6 < rms[z.searchsorted(1.0)] < 1e-2
    assert rms[:10].mean() > rms[-10:].mean()


def test_zero_strength_and_no_realization_are_unperturbed(waveguide, internal_waves):
    z = np.linspace(0.0, 5.0, 11)
    off = EnvModel(waveguide, internal_waves, sample_iw_realization(1, internal_waves), strength=0.0)
    assert not off.perturbed
    assert np.array_equal(off.perturbation(z, 2.0), np.zeros_like(z))
    assert np.array_equal(EnvModel(waveguide, internal_waves).potential(z, 1.0), munk_potential(z, waveguide))


def test_strength_scales_linearly(waveguide, internal_waves):
    rz = sample_iw_realization(4, internal_waves)
    z = np.linspace(0.0, 5.0, 21)
    unit = EnvModel(waveguide, internal_waves, rz).perturbation(z, 1.0)
    double = EnvModel(waveguide, internal_waves, rz, strength=2.0).perturbation(z, 1.0)
    np.testing.assert_allclose(double, 2.0 * unit, rtol=1e-12)


def test_depth_outside_window_is_rejected(waveguide, internal_waves):
    rz = sample_iw_realization(1, internal_waves)
    with pytest.raises(ValueError):
        eval_perturbation(rz, np.array([waveguide.z_max + 1.0]), 0.0, waveguide, internal_waves)


def test_mode_index_out_of_range(waveguide, internal_waves):
    with pytest.raises(ValueError):
        iw_mode_profile(internal_waves.j_max + 1, 0.1, 1.0, waveguide, internal_waves)


def test_on_grid_field_matches_direct_evaluation(perturbed, grid):
    field = perturbed.on_grid(grid.z)
    assert perturbed.on_grid(grid.z) is field
    np.testing.assert_allclose(field.potential(12.5), perturbed.potential(grid.z, 12.5), rtol=1e-12, atol=1e-18)


def test_vertical_structure_shape(waveguide, internal_waves):
    z = np.linspace(0.0, 5.0, 7)
    assert vertical_structure(z, waveguide, internal_waves).shape == (7, internal_waves.j_max)


def test_buoyancy_decays_with_depth_scale_b(waveguide, internal_waves):
    N = buoyancy(np.array([0.0, waveguide.B, 2.0 * waveguide.B]), waveguide, internal_waves)
    np.testing.assert_allclose(N, internal_waves.N0 * np.exp([0.0, -1.0, -2.0]))


def test_munk_curvature_on_axis(waveguide):
    h = 1e-3
    v = munk_potential(waveguide.z_a + np.array([-h, 0.0, h]), waveguide)
    second = (v[0] - 2.0 * v[1] + v[2]) / h**2
    assert second == pytest.approx(2.0 * waveguide.gamma / waveguide.B, rel=0.01)


def test_ensemble_mean_perturbation_vanishes(waveguide, internal_waves):
    z = np.array([0.3, 1.0, 2.0])
    samples = np.stack(
        [eval_perturbation(sample_iw_realization(seed, internal_waves), z, 7.5, waveguide, internal_waves)
         for seed in range(200)]
    )
    spread = samples.std(axis=0, ddof=1)
    assert np.all(spread > 0.0)
    assert np.all(np.abs(samples.mean(axis=0)) < 4.0 * spread / np.sqrt(samples.shape[0]))


def test_range_spectrum_lies_on_the_wavenumber_band(waveguide, internal_waves):
    rz = sample_iw_realization(6, internal_waves)
    dr, n = 0.25, 800
    ranges = dr * np.arange(n)
    series = np.array([eval_perturbation(rz, np.array([0.5]), r, waveguide, internal_waves)[0] for r in ranges])
    power = np.abs(np.fft.rfft((series - series.mean()) * np.hanning(n))) ** 2
    wavenumber = 2.0 * np.pi * np.fft.rfftfreq(n, d=dr)
    resolution = wavenumber[1]
    assert power[wavenumber > 1.2 * internal_waves.kl_max].sum() < 1e-4 * power.sum()
    peak = wavenumber[np.argmax(power)]
    assert internal_waves.kl_min - 2.0 * resolution <= peak <= internal_waves.kl_max + resolution
