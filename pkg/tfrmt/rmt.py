"""Random-matrix building blocks: variance profiles, Cayley blocks and ensemble members.

Within one block the perturbation matrix is epsilon*A with
epsilon*A_mn = s_mn (z_mn + conj(z_nm)) / sqrt(2) for m != n and
epsilon*A_mm = s_mm z_mm, z complex (real on the diagonal) unit Gaussians. A is
exactly Hermitian and every element keeps variance s_mn^2.
"""

from __future__ import annotations

from dataclasses import dataclass
import math
from typing import List, Optional, Sequence
import warnings

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor, lu_solve

from tfrmt.config import EnsembleSpec
from tfrmt.environment import IWRealization, range_coefficients
from tfrmt.errors import GridMismatchError
from tfrmt.models import Provenance
from tfrmt.modes import CouplingTensor, ModeBasis
from tfrmt.pe import UnitaryPropagator
from tfrmt.utils.logger import get_logger
from tfrmt.utils.seeds import RMT_STREAM, derive_seed, generator


logger = get_logger(__name__)

_L_CHUNK = 64


def _sinc(x: np.ndarray) -> np.ndarray:
    """sin(x)/x with sinc(0) = 1."""
    return np.sinc(x / math.pi)


@dataclass(frozen=True, eq=False)
class VarianceProfile:
    """Absolute element standard deviations s_mn (strength folded in) for one k."""

    k: float
    r_b: float
    s: np.ndarray
    strength: float = 1.0

    @property
    def M(self) -> int:
        return int(self.s.shape[0])

    @property
    def variance(self) -> np.ndarray:
        return self.s**2

    def scaled(self, strength: float) -> "VarianceProfile":
        """Same profile with a different strength multiplier."""
        if self.strength == 0.0:
            raise ValueError("cannot rescale a zero-strength profile")
        return VarianceProfile(self.k, self.r_b, self.s * (strength / self.strength), strength)


def variance_profile(
    basis: ModeBasis, coupling: CouplingTensor, r_b: float, strength: float = 1.0
) -> VarianceProfile:
    """s_mn^2 = (k^2 r_b^2 / 16) sum_l [sinc^2(w+ r_b/2) + sinc^2(w- r_b/2)] sum_j |V^{j,l}_mn|^2.

    w+- = k (E_m - E_n) +- k_l. The double sum is evaluated exactly, chunked over l.
    """
    if not math.isclose(basis.k, coupling.k, rel_tol=1e-12) or basis.M != coupling.M:
        raise GridMismatchError("coupling tensor and basis describe different k or M")
    M = basis.M
    if M == 0:
        return VarianceProfile(basis.k, r_b, np.zeros((0, 0)), strength)
    k = basis.k
    detuning = (k * (basis.E[:, None] - basis.E[None, :])).reshape(-1)
    g_squared = (coupling.G**2).reshape(coupling.j_max, -1)
    w_squared = coupling.weights**2
    total = np.zeros(M * M)
    for start in range(0, coupling.l_max, _L_CHUNK):
        kl = coupling.kl[start : start + _L_CHUNK, None]
        smear = _sinc((detuning[None, :] + kl) * r_b / 2.0) ** 2
        smear += _sinc((detuning[None, :] - kl) * r_b / 2.0) ** 2
        total += np.sum(g_squared * (w_squared[:, start : start + _L_CHUNK] @ smear), axis=0)
    sigma2 = (k**2 * r_b**2 / 16.0) * total.reshape(M, M)
    s = strength * np.sqrt(0.5 * (sigma2 + sigma2.T))
    s.flags.writeable = False
    return VarianceProfile(k=k, r_b=r_b, s=s, strength=strength)


@dataclass(frozen=True)
class BandProfile:
    """Mean s^2 along each diagonal |m - n| and its relative spread over (m + n)/2."""

    offsets: np.ndarray
    mean: np.ndarray
    relative_spread: np.ndarray


def band_profile(profile: VarianceProfile, max_offset: Optional[int] = None) -> BandProfile:
    M = profile.M
    max_offset = M - 1 if max_offset is None else min(max_offset, M - 1)
    offsets = np.arange(max_offset + 1)
    mean = np.empty(offsets.size)
    spread = np.empty(offsets.size)
    for d in offsets:
        band = np.diagonal(profile.variance, offset=int(d))
        mean[d] = band.mean()
        spread[d] = band.std() / mean[d] if mean[d] > 0 else 0.0
    return BandProfile(offsets=offsets, mean=mean, relative_spread=spread)


def draw_z(seed: int, M: int) -> np.ndarray:
    """Unit Gaussians: complex off the diagonal, real on it."""
    rng = generator(seed)
    z = (rng.standard_normal((M, M)) + 1j * rng.standard_normal((M, M))) / math.sqrt(2.0)
    z[np.diag_indices(M)] = rng.standard_normal(M)
    return z


def hermitian_generator(s: np.ndarray, z: np.ndarray) -> np.ndarray:
    """epsilon*A from element deviations ``s`` and a unit draw ``z`` of the same size."""
    if s.shape != z.shape:
        raise GridMismatchError(f"profile {s.shape} and draw {z.shape} differ")
    eps_a = s * (z + z.conj().T) / math.sqrt(2.0)
    eps_a[np.diag_indices_from(eps_a)] = np.diagonal(s) * np.diagonal(z).real
    return eps_a


def cayley(eps_a: np.ndarray, basis: ModeBasis, r_b: float) -> np.ndarray:
    """U = Lambda (I + i epsA)^-1 (I - i epsA) by LU with partial pivoting."""
    identity = np.eye(eps_a.shape[0])
    with warnings.catch_warnings():
        warnings.simplefilter("error", LinAlgWarning)
        try:
            factors = lu_factor(identity + 1j * eps_a)
            core = lu_solve(factors, identity - 1j * eps_a)
        except (LinAlgWarning, np.linalg.LinAlgError, ValueError) as exc:
            raise RuntimeError(f"Cayley solve failed at k={basis.k:.3f}: {exc}") from exc
    if not np.all(np.isfinite(core)):
        raise RuntimeError(f"Cayley solve produced non-finite values at k={basis.k:.3f}")
    return basis.phases(r_b)[:, None] * core


def first_order_block(eps_a: np.ndarray, basis: ModeBasis, r_b: float) -> np.ndarray:
    """Linearised block Lambda (I - 2i epsA)."""
    return basis.phases(r_b)[:, None] * (np.eye(eps_a.shape[0]) - 2j * eps_a)


@dataclass(frozen=True, eq=False)
class BlockDraw:
    """One building block: its generator, the Cayley unitary and the draw that made it."""

    eps_a: np.ndarray
    U: np.ndarray
    seed: int
    k: float
    r_b: float
    coherence_id: str

    @property
    def M(self) -> int:
        return int(self.U.shape[0])


def _check_pair(profile: VarianceProfile, basis: ModeBasis) -> None:
    if not math.isclose(profile.k, basis.k, rel_tol=1e-12) or profile.M != basis.M:
        raise GridMismatchError(
            f"profile (k={profile.k}, M={profile.M}) does not match basis (k={basis.k}, M={basis.M})"
        )


def draw_block(
    profile: VarianceProfile,
    basis: ModeBasis,
    seed: int,
    z_source: Optional[np.ndarray] = None,
    coherence_id: Optional[str] = None,
) -> BlockDraw:
    """Draw epsilon*A and its Cayley block; a shared ``z_source`` is cropped to M x M."""
    _check_pair(profile, basis)
    M = basis.M
    if z_source is None:
        z = draw_z(seed, M)
    else:
        if z_source.shape[0] < M or z_source.shape[1] < M:
            raise GridMismatchError(f"shared draw {z_source.shape} smaller than M={M}")
        z = z_source[:M, :M]
    eps_a = hermitian_generator(profile.s, z)
    return BlockDraw(
        eps_a=eps_a,
        U=cayley(eps_a, basis, profile.r_b),
        seed=int(seed),
        k=basis.k,
        r_b=profile.r_b,
        coherence_id=coherence_id or f"seed:{seed}",
    )


def compose(blocks: Sequence[BlockDraw]) -> UnitaryPropagator:
    """U(N r_b) = U_N ... U_2 U_1, first block applied first."""
    if not blocks:
        raise ValueError("compose needs at least one block")
    first = blocks[0]
    for block in blocks[1:]:
        if block.M != first.M or not math.isclose(block.k, first.k, rel_tol=1e-12):
            raise GridMismatchError("blocks differ in k or mode count")
        if not math.isclose(block.r_b, first.r_b, rel_tol=1e-12):
            raise GridMismatchError("blocks differ in block length")
    product = first.U
    for block in blocks[1:]:
        product = block.U @ product
    return UnitaryPropagator(
        U=product,
        r=len(blocks) * first.r_b,
        k=first.k,
        provenance=Provenance.RMT,
        r_b=first.r_b,
        n_blocks=len(blocks),
        seeds={f"block_{i}": block.seed for i, block in enumerate(blocks)},
    )


def block_seed(spec: EnsembleSpec, member: int, block: int, k_index: Optional[int] = None) -> int:
    """Collision-free seed for (master, member, block[, k])."""
    key = (RMT_STREAM, member, block) if k_index is None else (RMT_STREAM, member, block, k_index)
    return derive_seed(spec.master_seed, *key)


class MemberDraws:
    """z-draws of one ensemble member under a coherence policy.

    k-coherent members share one draw per block across the whole k-grid, cropped
    to each k's mode count; white-noise members draw per (block, k).
    """

    def __init__(self, spec: EnsembleSpec, member: int, M_max: int) -> None:
        self.spec = spec
        self.member = member
        self.M_max = M_max
        self._shared: List[np.ndarray] = []
        if spec.coherence == "k-coherent":
            self._shared = [
                draw_z(block_seed(spec, member, b), M_max) for b in range(spec.n_blocks)
            ]

    def block(self, profile: VarianceProfile, basis: ModeBasis, b: int, k_index: int) -> BlockDraw:
        if self._shared:
            seed = block_seed(self.spec, self.member, b)
            return draw_block(
                profile, basis, seed, z_source=self._shared[b],
                coherence_id=f"member:{self.member}/block:{b}",
            )
        seed = block_seed(self.spec, self.member, b, k_index)
        return draw_block(
            profile, basis, seed, coherence_id=f"member:{self.member}/block:{b}/k:{k_index}"
        )


def _family_size(bases: Sequence[ModeBasis]) -> int:
    return max((basis.M for basis in bases), default=0)


def draw_member(
    spec: EnsembleSpec,
    member: int,
    profiles: Sequence[VarianceProfile],
    bases: Sequence[ModeBasis],
) -> List[UnitaryPropagator]:
    """U_rmt(N r_b; k) for every k of the grid for one member."""
    if len(profiles) != len(bases):
        raise GridMismatchError("one profile per basis is required")
    draws = MemberDraws(spec, member, _family_size(bases))
    family: List[UnitaryPropagator] = []
    for index, (profile, basis) in enumerate(zip(profiles, bases)):
        if basis.empty:
            family.append(
                UnitaryPropagator(
                    np.zeros((0, 0), complex), spec.range_km, basis.k, Provenance.RMT,
                    r_b=spec.r_b, n_blocks=spec.n_blocks,
                )
            )
            continue
        blocks = [draws.block(profile, basis, b, index) for b in range(spec.n_blocks)]
        family.append(compose(blocks))
    return family


def apply_member(
    spec: EnsembleSpec,
    member: int,
    profiles: Sequence[VarianceProfile],
    bases: Sequence[ModeBasis],
    amplitudes: Sequence[np.ndarray],
) -> List[np.ndarray]:
    """c(k) = U_rmt(k) a(k) applied block by block without forming the product."""
    if not len(profiles) == len(bases) == len(amplitudes):
        raise GridMismatchError("profiles, bases and amplitudes must align on the k-grid")
    draws = MemberDraws(spec, member, _family_size(bases))
    result: List[np.ndarray] = []
    for index, (profile, basis, a) in enumerate(zip(profiles, bases, amplitudes)):
        c = np.asarray(a, dtype=np.complex128)
        if basis.empty:
            result.append(c.copy())
            continue
        for b in range(spec.n_blocks):
            c = draws.block(profile, basis, b, index).U @ c
        result.append(c)
    return result


def interaction_integral(
    basis: ModeBasis,
    coupling: CouplingTensor,
    realization: IWRealization,
    r_b: float,
    n_points: int = 1001,
    strength: float = 1.0,
) -> np.ndarray:
    """(k/2) integral_0^r_b [epsilon V_I]_mn dr' for one internal-wave realization.

    V_I(r') = exp(i k E_m r') V_mn(r') exp(-i k E_n r'), integrated by the trapezoid rule.
    """
    if realization.phases.shape != coupling.weights.shape:
        raise GridMismatchError("realization does not match the coupling tensor")
    M = basis.M
    r = np.linspace(0.0, r_b, n_points)
    weights = np.full(n_points, r[1] - r[0])
    weights[[0, -1]] *= 0.5
    series = np.stack(
        [range_coefficients(realization, coupling.weights, coupling.kl, x) for x in r]
    )
    detuning = (basis.k * (basis.E[:, None] - basis.E[None, :])).reshape(-1)
    phase = np.exp(1j * r[:, None] * detuning[None, :])
    per_mode = (series * weights[:, None]).T @ phase
    total = np.sum(coupling.G.reshape(coupling.j_max, -1) * per_mode, axis=0)
    return 0.5 * basis.k * strength * total.reshape(M, M)


def participation_ratio(U: np.ndarray) -> np.ndarray:
    """Per-row participation ratio (sum |U|^2)^2 / sum |U|^4."""
    power = np.abs(U) ** 2
    return np.sum(power, axis=1) ** 2 / np.sum(power**2, axis=1)
