"""Broadband timefront synthesis, ensemble-averaged intensity and the mixing front.

Phi(z, tau) = (2 pi sigma_k^2 r)^(-1/2) sum_k dk t_k W(k) sum_m psi_m(z; k) c_m(k) e^{-i k c0 tau}
with trapezoid weights t_k, Gaussian window W and reduced time tau = t - r/c0. On a
uniform k-grid the k-sum is a DFT, so tau is uniform with window T = 2 pi / (c0 dk).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
from typing import List, Optional, Sequence

import numpy as np

from tfrmt.config import SourceSpec
from tfrmt.errors import GridMismatchError, KWindowError
from tfrmt.models import Provenance
from tfrmt.modes import DepthGrid, ModeBasis, project, residual_fraction
from tfrmt.pe import UnitaryPropagator
from tfrmt.rmt import VarianceProfile, draw_z, first_order_block, hermitian_generator, cayley
from tfrmt.utils.levels import IntensityAccumulator
from tfrmt.utils.logger import get_logger
from tfrmt.utils.seeds import RMT_STREAM, derive_seed


logger = get_logger(__name__)

SPILLOVER_WARN = 0.01
_UNIFORM_TOL = 1e-9


def build_k_grid(
    src: SourceSpec, c0: float, count: int, n_sigmas: float = 4.0, clip_tol: float = 4e-4
) -> np.ndarray:
    """Uniform grid of ``count`` samples on (k0 - n sigma_k, k0 + n sigma_k] with n = ``n_sigmas``.

    The lower edge is left out, so a source with f0 = n_sigmas * sigma_f starts one step above k = 0.
    """
    k0, sigma_k = src.k0(c0), src.sigma_k(c0)
    dk = 2.0 * n_sigmas * sigma_k / count
    k_grid = k0 - n_sigmas * sigma_k + dk * np.arange(1, count + 1)
    check_k_grid(k_grid, src, c0, clip_tol)
    return k_grid


def check_k_grid(k_grid: np.ndarray, src: SourceSpec, c0: float, clip_tol: float = 4e-4) -> None:
    """Reject non-uniform grids, k <= 0, and windows clipping the Gaussian above ``clip_tol``.

    A grid is read as the half-open window (k_grid[0] - dk, k_grid[-1]].
    """
    k_grid = np.asarray(k_grid, dtype=np.float64)
    if k_grid.size < 2:
        raise KWindowError("k-grid needs at least two samples")
    if k_grid[0] <= 0:
        raise KWindowError(f"k-grid starts at k={k_grid[0]:.4f} <= 0 rad/km")
    steps = np.diff(k_grid)
    if np.any(steps <= 0) or np.ptp(steps) > _UNIFORM_TOL * abs(steps.mean()) * k_grid.size:
        raise KWindowError("k-grid is not uniform and increasing")
    edge = spectral_window(np.array([k_grid[0] - steps.mean(), k_grid[-1]]), src, c0)
    if np.max(edge) > clip_tol:
        raise KWindowError(
            f"k-window clips the source spectrum at {np.max(edge):.2e} of peak (limit {clip_tol:.1e})"
        )


def spectral_window(k: np.ndarray, src: SourceSpec, c0: float) -> np.ndarray:
    """W(k) = exp(-(k - k0)^2 / (2 sigma_k^2))."""
    k = np.asarray(k, dtype=np.float64)
    return np.exp(-((k - src.k0(c0)) ** 2) / (2.0 * src.sigma_k(c0) ** 2))


def time_axis(k_grid: np.ndarray, c0: float) -> np.ndarray:
    """Reduced times tau_n = (n - K//2) dt with dt = 2 pi / (c0 dk K)."""
    K = len(k_grid)
    dk = (k_grid[-1] - k_grid[0]) / (K - 1)
    dt = 2.0 * math.pi / (c0 * dk * K)
    return (np.arange(K) - K // 2) * dt


def _quadrature_weights(k_grid: np.ndarray) -> np.ndarray:
    K = len(k_grid)
    weights = np.full(K, (k_grid[-1] - k_grid[0]) / (K - 1))
    weights[[0, -1]] *= 0.5
    return weights


def source_profile(z: np.ndarray, src: SourceSpec, h: float) -> np.ndarray:
    """Gaussian depth profile exp(-((z - z_src)/w_src)^2), unit norm on the grid."""
    profile = np.exp(-(((np.asarray(z) - src.z_src) / src.w_src) ** 2))
    return profile / math.sqrt(h * np.sum(profile**2))


def _weights_and_spill(src: SourceSpec, basis: ModeBasis) -> tuple:
    if src.w_src < 2.0 * basis.grid.h:
        raise ValueError(f"source width {src.w_src} km is not resolved by h={basis.grid.h:.2e} km")
    if basis.empty:
        return np.zeros(0, dtype=np.complex128), 1.0
    profile = source_profile(basis.z_grid, src, basis.grid.h)
    return project(profile, basis).astype(np.complex128), residual_fraction(profile, basis)


def source_weights(src: SourceSpec, basis: ModeBasis) -> np.ndarray:
    """a_n(k): projection of the source profile onto the modes at k."""
    a, spill = _weights_and_spill(src, basis)
    if spill > SPILLOVER_WARN and not basis.empty:
        logger.bind(k=basis.k).warning(
            "Source spillover {:.2%} at k={:.3f} rad/km (untrapped modes excited)", spill, basis.k
        )
    return a


def source_family(src: SourceSpec, bases: Sequence[ModeBasis], c0: float) -> List[np.ndarray]:
    """a(k) for every basis; one warning if the central +-2 sigma_k band spills over."""
    k0, sigma_k = src.k0(c0), src.sigma_k(c0)
    amplitudes: List[np.ndarray] = []
    spilled: List[float] = []
    for basis in bases:
        a, spill = _weights_and_spill(src, basis)
        amplitudes.append(a)
        if abs(basis.k - k0) <= 2.0 * sigma_k and spill > SPILLOVER_WARN:
            spilled.append(basis.k)
    if spilled:
        logger.warning(
            "Source excites untrapped modes at {} central wavenumbers (first k={:.3f} rad/km)",
            len(spilled),
            spilled[0],
        )
    return amplitudes


def unperturbed_amplitudes(a: np.ndarray, basis: ModeBasis, r: float) -> np.ndarray:
    """Lambda(r) a."""
    return basis.phases(r) * a


@dataclass(frozen=True, eq=False)
class TimefrontGrid:
    """Complex field Phi over (depth, reduced time) at range r."""

    phi: np.ndarray
    z: np.ndarray
    tau: np.ndarray
    r: float
    k_grid: np.ndarray
    source: SourceSpec
    provenance: Provenance
    meta: dict = field(default_factory=dict)

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.phi) ** 2

    def energy(self, dz: float) -> float:
        """Double integral of |Phi|^2 over depth and reduced time."""
        dt = self.tau[1] - self.tau[0]
        return float(dz * dt * np.sum(self.intensity))


@dataclass(frozen=True, eq=False)
class IntensityGrid:
    """Real intensity over (depth, reduced time), optionally with standard errors."""

    values: np.ndarray
    z: np.ndarray
    tau: np.ndarray
    r: float
    members: int
    stderr: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def peak(self) -> float:
        return float(np.max(self.values))

    def axes_match(self, other: "IntensityGrid") -> bool:
        return (
            self.values.shape == other.values.shape
            and np.array_equal(self.z, other.z)
            and np.array_equal(self.tau, other.tau)
        )


def _prefactor(src: SourceSpec, c0: float, r: float) -> float:
    return 1.0 / math.sqrt(2.0 * math.pi * src.sigma_k(c0) ** 2 * r)


def _fft_over_k(spectrum: np.ndarray, k_grid: np.ndarray, c0: float, tau: np.ndarray) -> np.ndarray:
    """sum_q spectrum[..., q] e^{-i k_q c0 tau_n} via FFT along the last axis."""
    transformed = np.fft.fftshift(np.fft.fft(spectrum, axis=-1), axes=-1)
    return transformed * np.exp(-1j * k_grid[0] * c0 * tau)


def synthesize_amplitudes(
    coeffs: Sequence[np.ndarray],
    bases: Sequence[ModeBasis],
    k_grid: np.ndarray,
    src: SourceSpec,
    c0: float,
    r: float,
    depth_stride: int = 1,
    provenance: Provenance = Provenance.RMT,
    workers: int = 1,
    meta: Optional[dict] = None,
) -> TimefrontGrid:
    """Timefront from per-k modal amplitudes c(k) at range r."""
    k_grid = np.asarray(k_grid, dtype=np.float64)
    if not len(coeffs) == len(bases) == len(k_grid):
        raise GridMismatchError("coefficients, bases and k-grid must have equal length")
    grid: DepthGrid = bases[0].grid
    if any(basis.grid != grid for basis in bases):
        raise GridMismatchError("bases on the k-grid use different depth grids")
    rows = slice(None, None, depth_stride)
    z = grid.z[rows]
    tau = time_axis(k_grid, c0)
    scale = _quadrature_weights(k_grid) * spectral_window(k_grid, src, c0) * _prefactor(src, c0, r)

    def _column(index: int) -> np.ndarray:
        basis = bases[index]
        if basis.empty:
            return np.zeros(z.size, dtype=np.complex128)
        return scale[index] * (basis.psi[rows] @ np.asarray(coeffs[index], dtype=np.complex128))

    with ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="tfrmt-synth") as pool:
        columns = list(pool.map(_column, range(len(k_grid))))
    spectrum = np.stack(columns, axis=1)
    phi = _fft_over_k(spectrum, k_grid, c0, tau)
    header = {"depth_stride": depth_stride, "K": len(k_grid)}
    header.update(meta or {})
    return TimefrontGrid(
        phi=phi, z=z, tau=tau, r=r, k_grid=k_grid, source=src, provenance=provenance, meta=header
    )


def synthesize(
    family: Sequence[UnitaryPropagator],
    bases: Sequence[ModeBasis],
    src: SourceSpec,
    r: float,
    k_grid: np.ndarray,
    c0: float,
    depth_stride: int = 1,
    clip_tol: float = 4e-4,
    workers: int = 1,
) -> TimefrontGrid:
    """Phi from one propagator per k: c(k) = U(k) a(k)."""
    k_grid = np.asarray(k_grid, dtype=np.float64)
    check_k_grid(k_grid, src, c0, clip_tol)
    if len(family) != len(bases):
        raise GridMismatchError("one propagator per basis is required")
    coeffs = []
    provenance = family[0].provenance if family else Provenance.UNPERTURBED
    for propagator, basis, a in zip(family, bases, source_family(src, bases, c0)):
        if propagator.M != basis.M:
            raise GridMismatchError(f"propagator M={propagator.M} but basis M={basis.M} at k={basis.k}")
        coeffs.append(propagator.U @ a)
    return synthesize_amplitudes(
        coeffs, bases, k_grid, src, c0, r, depth_stride, provenance=provenance, workers=workers
    )


def unperturbed_timefront(
    bases: Sequence[ModeBasis],
    src: SourceSpec,
    r: float,
    k_grid: np.ndarray,
    c0: float,
    depth_stride: int = 1,
    workers: int = 1,
) -> TimefrontGrid:
    """Timefront with U = Lambda(r) at every k."""
    amplitudes = source_family(src, bases, c0)
    coeffs = [unperturbed_amplitudes(a, b, r) for a, b in zip(amplitudes, bases)]
    return synthesize_amplitudes(
        coeffs, bases, k_grid, src, c0, r, depth_stride, Provenance.UNPERTURBED, workers
    )


def average_intensity(members: Sequence[TimefrontGrid]) -> IntensityGrid:
    """Pointwise mean of |Phi|^2 in member order."""
    if not members:
        raise ValueError("no members to average")
    first = members[0]
    accumulator = IntensityAccumulator()
    for member in members:
        if (
            member.phi.shape != first.phi.shape
            or not np.array_equal(member.z, first.z)
            or not np.array_equal(member.tau, first.tau)
            or member.r != first.r
        ):
            raise GridMismatchError("members have mismatched axes")
        accumulator.push(member.intensity)
    return IntensityGrid(
        values=accumulator.mean,
        z=first.z,
        tau=first.tau,
        r=first.r,
        members=accumulator.count,
        stderr=accumulator.standard_error,
    )


def _padded(bases: Sequence[ModeBasis], rows: slice) -> np.ndarray:
    """psi_m(z; k) over the k-grid, zero beyond each k's mode count; (K, nz_out, M_max)."""
    M_max = max((basis.M for basis in bases), default=0)
    nz_out = len(bases[0].grid.z[rows])
    psi = np.zeros((len(bases), nz_out, M_max))
    for q, basis in enumerate(bases):
        psi[q, :, : basis.M] = basis.psi[rows]
    return psi


def mixing_front(
    profiles: Sequence[VarianceProfile],
    bases: Sequence[ModeBasis],
    src: SourceSpec,
    k_grid: np.ndarray,
    c0: float,
    r_b: float,
    depth_stride: int = 1,
    clip_tol: float = 4e-4,
    m_chunk: int = 16,
) -> IntensityGrid:
    """delta I = (1/(2 pi sigma_k^2 r_b)) sum_mn |sum_k dk W 2 s_mn e^{-i k r_b E_m} a_n psi_m e^{-i k c0 tau}|^2.

    Single block only, so it is compared against ensembles at r = r_b.
    """
    k_grid = np.asarray(k_grid, dtype=np.float64)
    check_k_grid(k_grid, src, c0, clip_tol)
    if not len(profiles) == len(bases) == len(k_grid):
        raise GridMismatchError("profiles, bases and k-grid must have equal length")
    rows = slice(None, None, depth_stride)
    tau = time_axis(k_grid, c0)
    psi = _padded(bases, rows)
    K, nz_out, M_max = psi.shape
    scale = _quadrature_weights(k_grid) * spectral_window(k_grid, src, c0) * _prefactor(src, c0, r_b)

    # coef[q, m, n] = scale_q 2 s_mn e^{-i k r_b E_m} a_n at k_q
    coef = np.zeros((K, M_max, M_max), dtype=np.complex128)
    amplitudes = source_family(src, bases, c0)
    for q, (profile, basis, a) in enumerate(zip(profiles, bases, amplitudes)):
        if basis.empty:
            continue
        if profile.M != basis.M:
            raise GridMismatchError(f"profile M={profile.M} but basis M={basis.M} at k={basis.k}")
        coef[q, : basis.M, : basis.M] = (
            scale[q] * 2.0 * profile.s * basis.phases(r_b)[:, None] * a[None, :]
        )

    total = np.zeros((nz_out, K))
    active = np.nonzero(np.max(np.abs(coef), axis=(0, 1)) > 0)[0]
    for n in active:
        for start in range(0, M_max, m_chunk):
            block = coef[:, start : start + m_chunk, n]
            if not np.any(block):
                continue
            # spectrum[m, z, q] = coef[q, m, n] psi_m(z; k_q)
            spectrum = np.einsum("qm,qzm->mzq", block, psi[:, :, start : start + m_chunk])
            total += np.sum(np.abs(_fft_over_k(spectrum, k_grid, c0, tau)) ** 2, axis=0)
    z = bases[0].grid.z[rows]
    return IntensityGrid(
        values=total, z=z, tau=tau, r=r_b, members=0, meta={"kind": "mixing-front", "K": K}
    )


@dataclass(frozen=True, eq=False)
class MixingFrontEstimate:
    """Monte-Carlo single-block estimates of the mixing front."""

    delta_intensity: IntensityGrid
    scattered: IntensityGrid
    unperturbed: IntensityGrid


def brute_force_mixing_front(
    profiles: Sequence[VarianceProfile],
    bases: Sequence[ModeBasis],
    src: SourceSpec,
    k_grid: np.ndarray,
    c0: float,
    r_b: float,
    members: int,
    master_seed: int,
    depth_stride: int = 1,
    linear: bool = False,
    clip_tol: float = 4e-4,
) -> MixingFrontEstimate:
    """<|Phi|^2> - I_0 and <|Phi - Phi_0|^2> over k-coherent single-block members.

    With ``linear`` the blocks are Lambda(I - 2i epsA), for which <|Phi - Phi_0|^2>
    has exactly the analytic mixing front as its expectation.
    """
    k_grid = np.asarray(k_grid, dtype=np.float64)
    check_k_grid(k_grid, src, c0, clip_tol)
    amplitudes = source_family(src, bases, c0)
    M_max = max((basis.M for basis in bases), default=0)
    base = synthesize_amplitudes(
        [unperturbed_amplitudes(a, b, r_b) for a, b in zip(amplitudes, bases)],
        bases, k_grid, src, c0, r_b, depth_stride, Provenance.UNPERTURBED,
    )
    unperturbed = base.intensity
    intensity = IntensityAccumulator()
    scatter = IntensityAccumulator()
    make_block = first_order_block if linear else cayley
    for member in range(members):
        z = draw_z(derive_seed(master_seed, RMT_STREAM, member, 0), M_max)
        coeffs = []
        for profile, basis, a in zip(profiles, bases, amplitudes):
            if basis.empty:
                coeffs.append(a)
                continue
            eps_a = hermitian_generator(profile.s, z[: basis.M, : basis.M])
            coeffs.append(make_block(eps_a, basis, r_b) @ a)
        phi = synthesize_amplitudes(coeffs, bases, k_grid, src, c0, r_b, depth_stride).phi
        intensity.push(np.abs(phi) ** 2)
        scatter.push(np.abs(phi - base.phi) ** 2)
    meta = {"kind": "linear" if linear else "cayley", "members": members}
    return MixingFrontEstimate(
        delta_intensity=IntensityGrid(
            intensity.mean - unperturbed, base.z, base.tau, r_b, members,
            stderr=intensity.standard_error, meta=meta,
        ),
        scattered=IntensityGrid(
            scatter.mean, base.z, base.tau, r_b, members, stderr=scatter.standard_error, meta=meta
        ),
        unperturbed=IntensityGrid(unperturbed, base.z, base.tau, r_b, 1),
    )
