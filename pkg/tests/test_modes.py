import math

import numpy as np
import pytest

from tfrmt.errors import GridMismatchError, ModeCountError
from tfrmt.modes import (
    DepthGrid,
    ModeCache,
    coupling_elements,
    coupling_tensor,
    mode_overlay,
    project,
    reconstruct,
    residual_fraction,
    solve_modes,
    trapped_count,
)


K_75HZ = 2.0 * math.pi * 75.0 / 1.49


def _harmonic(k, wg, m):
    return math.sqrt(2.0 * wg.gamma / wg.B) * (m + 0.5) / k


def test_ground_state_matches_harmonic_oscillator(waveguide, grid):
    basis = solve_modes(K_75HZ, waveguide, M_requested=5, grid=grid)
    assert basis.E[0] == pytest.approx(_harmonic(K_75HZ, waveguide, 0), rel=0.01)


def test_low_modes_are_nearly_evenly_spaced(waveguide, grid):
    basis = solve_modes(K_75HZ, waveguide, M_requested=5, grid=grid)
    spacing = np.diff(basis.E[:4])
    assert np.ptp(spacing) / spacing.mean() < 0.05
    assert np.all(np.diff(basis.E) > 0)


def test_modes_are_orthonormal(basis):
    assert np.max(np.abs(basis.gram() - np.eye(basis.M))) < 1e-8


def test_sign_convention_first_lobe_positive(basis):
    for m in range(basis.M):
        column = basis.psi[:, m]
        first = np.argmax(np.abs(column) >= 0.1 * np.abs(column).max())
        assert column[first] > 0


def test_trapped_modes_lie_below_surface_potential(basis, waveguide, k0, grid):
    assert basis.M == basis.trapped == trapped_count(k0, waveguide, grid)
    assert basis.M > 5
    assert basis.E[-1] < waveguide.B * waveguide.gamma / 2.0 * (math.exp(2.0) - 3.0)


def test_requesting_too_many_modes(waveguide, grid, k0):
    trapped = trapped_count(k0, waveguide, grid)
    with pytest.raises(ModeCountError) as info:
        solve_modes(k0, waveguide, M_requested=trapped + 1, grid=grid)
    assert info.value.trapped == trapped


def test_low_wavenumber_traps_nothing(waveguide, grid):
    basis = solve_modes(0.5, waveguide, grid=grid)
    assert basis.empty
    assert basis.psi.shape == (grid.nz, 0)


def test_non_positive_wavenumber_rejected(waveguide, grid):
    with pytest.raises(ValueError):
        solve_modes(0.0, waveguide, grid=grid)


def test_under_resolved_grid_is_rejected(waveguide):
    with pytest.raises(ValueError, match="under-resolves"):
        solve_modes(K_75HZ, waveguide, grid=DepthGrid(waveguide.z_min, waveguide.z_max, 255))


def test_grid_refinement_converges(waveguide, grid):
    coarse = solve_modes(K_75HZ, waveguide, M_requested=3, grid=grid)
    fine = solve_modes(K_75HZ, waveguide, M_requested=3, grid=grid.refined())
    assert np.max(np.abs(coarse.E - fine.E) / fine.E) < 5e-3
    np.testing.assert_allclose(fine.z_grid[1::2], grid.z, atol=1e-12)


def test_project_and_reconstruct_are_inverse(basis):
    coeffs = np.arange(1, basis.M + 1, dtype=float) / basis.M
    field = reconstruct(coeffs, basis)
    np.testing.assert_allclose(project(field, basis), coeffs, atol=1e-10)
    assert residual_fraction(field, basis) < 1e-10


def test_project_rejects_other_grid(basis):
    with pytest.raises(GridMismatchError):
        project(np.zeros(basis.grid.nz + 2), basis)
    with pytest.raises(GridMismatchError):
        project(np.zeros(basis.grid.nz), basis, z=basis.z_grid + 0.01)


def test_mode_overlay_offsets_by_eigenvalue(basis):
    overlay = mode_overlay(basis, count=4)
    assert overlay.shape == (basis.grid.nz, 4)
    np.testing.assert_allclose(overlay[0], basis.E[:4], atol=1e-9)


def test_coupling_tensor_blocks_match_direct_elements(basis, waveguide, internal_waves):
    tensor = coupling_tensor(basis, waveguide, internal_waves)
    for j, l in [(1, 1), (3, 17), (6, 64)]:
        direct = coupling_elements(basis, waveguide, internal_waves, j, l)
        np.testing.assert_allclose(tensor.block(j, l), direct, rtol=1e-6, atol=1e-14)
        np.testing.assert_allclose(direct, direct.T, rtol=1e-10, atol=1e-16)


def test_coupling_indices_are_checked(basis, waveguide, internal_waves):
    with pytest.raises(ValueError):
        coupling_elements(basis, waveguide, internal_waves, 0, 1)
    with pytest.raises(IndexError):
        coupling_elements(basis, waveguide, internal_waves, 1, 1, rows=[basis.M])


def test_cache_lowers_mode_count_to_trapped(waveguide, internal_waves, grid, k0):
    cache = ModeCache(waveguide, internal_waves, grid, mode_count=10_000)
    basis = cache.basis(k0)
    assert basis.M == trapped_count(k0, waveguide, grid)
    assert cache.basis(k0) is basis


def test_cache_family_preserves_order(cache, k0):
    ks = [k0 * 0.8, k0, k0 * 1.2]
    family = cache.family(ks, workers=3)
    assert [b.k for b in family] == ks
    assert family[1] is cache.basis(k0)
