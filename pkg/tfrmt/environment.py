"""Sound-speed model: Munk waveguide plus Garrett-Munk internal-wave perturbations.

All depths and ranges are in km (z positive downward), wavenumbers in rad/km.
The internal-wave weighting V_j(z;k_l) factorises as g_j(z) * w_jl, with g_j the
vertical structure of mode j and w_jl = sqrt(I_{j,k_l} / (j^2 + j_*^2)).
"""

from __future__ import annotations

from dataclasses import dataclass
import math
import threading
from typing import Dict, Optional, Tuple, Union

import numpy as np

from tfrmt.config import InternalWaveParams, WaveguideParams
from tfrmt.errors import GridMismatchError
from tfrmt.utils.logger import get_logger
from tfrmt.utils.seeds import generator


logger = get_logger(__name__)

ArrayLike = Union[float, np.ndarray]

# Potential sound-speed gradient coefficient (dimensionless).
_GRADIENT_COEFFICIENT = 24.5
_M_PER_KM = 1000.0


def munk_potential(z: ArrayLike, p: WaveguideParams) -> ArrayLike:
    """Munk canonical potential V0(z) = (B*gamma/2)[exp(-eta) - 1 + eta]."""
    eta = 2.0 * (np.asarray(z, dtype=np.float64) - p.z_a) / p.B
    return 0.5 * p.B * p.gamma * (np.exp(-eta) - 1.0 + eta)


def buoyancy(z: ArrayLike, wg: WaveguideParams, iw: InternalWaveParams) -> ArrayLike:
    """Buoyancy frequency N(z) = N0 exp(-z/B) in rad/s."""
    return iw.N0 * np.exp(-np.asarray(z, dtype=np.float64) / wg.B)


def gm_normalization(j_star: float) -> float:
    """Garrett-Munk mode normalisation M = (pi*j_* - 1) / (2 j_*^2)."""
    return (math.pi * j_star - 1.0) / (2.0 * j_star**2)


def mode_wavenumber(j: ArrayLike, wg: WaveguideParams, iw: InternalWaveParams) -> ArrayLike:
    """k_j = f_i * pi * j / (N0 * B) in rad/km (B in km)."""
    return iw.f_i * math.pi * np.asarray(j, dtype=np.float64) / (iw.N0 * wg.B)


def spectral_weight(
    j: ArrayLike, k_l: ArrayLike, wg: WaveguideParams, iw: InternalWaveParams
) -> ArrayLike:
    """Closed-form horizontal spectral weight I_{j,k_l} (km)."""
    k_j = mode_wavenumber(j, wg, iw)
    beta2 = (np.asarray(k_l, dtype=np.float64) / k_j) ** 2
    root = np.sqrt(beta2 + 1.0)
    bracket = 1.0 / (beta2 + 1.0) + 0.5 * beta2 / root**3 * np.log((root + 1.0) / (root - 1.0))
    return bracket / k_j


def displacement_prefactor(wg: WaveguideParams, iw: InternalWaveParams) -> float:
    """(24.5/g)(2B/pi) N0^2 sqrt(E dk_l / M), dimensionless.

    g is in m/s^2 and N0 in rad/s, so B enters in metres here. dk_l is in rad/km
    and pairs with I_{j,k_l} in km, which keeps dk_l * I dimensionless.
    """
    b_m = wg.B * _M_PER_KM
    amplitude = math.sqrt(iw.E_gm * iw.dkl / gm_normalization(iw.j_star))
    return _GRADIENT_COEFFICIENT / iw.g * (2.0 * b_m / math.pi) * iw.N0**2 * amplitude


def _xi(z: np.ndarray, wg: WaveguideParams) -> np.ndarray:
    return np.exp(-z / wg.B) - math.exp(-wg.H / wg.B)


def vertical_structure(z: ArrayLike, wg: WaveguideParams, iw: InternalWaveParams) -> np.ndarray:
    """g_j(z) for j = 1..j_max; shape z.shape + (j_max,)."""
    z = np.asarray(z, dtype=np.float64)
    j = np.arange(1, iw.j_max + 1, dtype=np.float64)
    envelope = displacement_prefactor(wg, iw) * np.exp(-1.5 * z / wg.B)
    return envelope[..., None] * np.sin(math.pi * j * _xi(z, wg)[..., None])


def mode_weights(wg: WaveguideParams, iw: InternalWaveParams) -> np.ndarray:
    """w_jl = sqrt(I_{j,k_l} / (j^2 + j_*^2)); shape (j_max, l_max)."""
    j = np.arange(1, iw.j_max + 1, dtype=np.float64)[:, None]
    intensity = spectral_weight(j, iw.kl_grid[None, :], wg, iw)
    return np.sqrt(intensity / (j**2 + iw.j_star**2))


def iw_mode_profile(
    j: int, k_l: float, z: ArrayLike, wg: WaveguideParams, iw: InternalWaveParams
) -> ArrayLike:
    """Depth dependence and weighting V_j(z;k_l) of internal-wave mode j."""
    if not 1 <= int(j) <= iw.j_max:
        raise ValueError(f"internal-wave mode j={j} outside [1, {iw.j_max}]")
    z = np.asarray(z, dtype=np.float64)
    structure = (
        displacement_prefactor(wg, iw)
        * np.exp(-1.5 * z / wg.B)
        * np.sin(math.pi * j * _xi(z, wg))
    )
    weight = math.sqrt(float(spectral_weight(j, k_l, wg, iw)) / (j**2 + iw.j_star**2))
    return structure * weight


@dataclass(frozen=True, eq=False)
class IWRealization:
    """Frozen internal-wave phase set phi_jl in [0, 2pi)."""

    seed: int
    phases: np.ndarray

    @property
    def j_max(self) -> int:
        return int(self.phases.shape[0])

    @property
    def l_max(self) -> int:
        return int(self.phases.shape[1])

    def to_dict(self) -> dict:
        return {"seed": self.seed, "j_max": self.j_max, "l_max": self.l_max}

    @staticmethod
    def from_dict(data: dict, iw: InternalWaveParams) -> "IWRealization":
        """Regenerate phases from a serialised {seed, j_max, l_max} record."""
        if int(data["j_max"]) != iw.j_max or int(data["l_max"]) != iw.l_max:
            raise GridMismatchError(
                f"realization dims ({data['j_max']}, {data['l_max']}) do not match "
                f"internal-wave params ({iw.j_max}, {iw.l_max})"
            )
        return sample_iw_realization(int(data["seed"]), iw)


def sample_iw_realization(seed: int, p: InternalWaveParams) -> IWRealization:
    """Draw phases; phase (j, l) depends only on (seed, j, l)."""
    phases = np.empty((p.j_max, p.l_max))
    for j in range(1, p.j_max + 1):
        phases[j - 1] = generator(seed, j).uniform(0.0, 2.0 * math.pi, p.l_max)
    phases.flags.writeable = False
    return IWRealization(seed=int(seed), phases=phases)


def _check_window(z: np.ndarray, wg: WaveguideParams) -> None:
    if np.any(z < wg.z_min) or np.any(z > wg.z_max):
        raise ValueError(f"depth outside computational window [{wg.z_min}, {wg.z_max}] km")


def range_coefficients(
    rz: IWRealization, weights: np.ndarray, kl: np.ndarray, r: float
) -> np.ndarray:
    """c_j(r) = sum_l w_jl cos(phi_jl + k_l r)."""
    return np.sum(weights * np.cos(rz.phases + kl[None, :] * r), axis=1)


def eval_perturbation(
    rz: IWRealization,
    z: ArrayLike,
    r: float,
    wg: WaveguideParams,
    iw: InternalWaveParams,
    strength: float = 1.0,
) -> ArrayLike:
    """epsilon*V1(z, r) = sum_j sum_l V_j(z;k_l) cos(phi_jl + k_l r)."""
    z = np.asarray(z, dtype=np.float64)
    _check_window(z, wg)
    if rz.phases.shape != (iw.j_max, iw.l_max):
        raise GridMismatchError(
            f"realization shape {rz.phases.shape} does not match ({iw.j_max}, {iw.l_max})"
        )
    coeffs = range_coefficients(rz, mode_weights(wg, iw), iw.kl_grid, r)
    return strength * (vertical_structure(z, wg, iw) @ coeffs)


class PerturbationField:
    """Potential of an environment sampled on a fixed depth grid."""

    def __init__(self, env: "EnvModel", z: np.ndarray) -> None:
        self._env = env
        self.z = np.asarray(z, dtype=np.float64)
        _check_window(self.z, env.waveguide)
        self.v0 = munk_potential(self.z, env.waveguide)
        self._structure: Optional[np.ndarray] = None
        if env.perturbed:
            self._structure = vertical_structure(self.z, env.waveguide, env.internal_waves)
            self._weights = mode_weights(env.waveguide, env.internal_waves)
            self._kl = env.internal_waves.kl_grid

    @property
    def static(self) -> bool:
        return self._structure is None

    def perturbation(self, r: float) -> np.ndarray:
        if self._structure is None:
            return np.zeros_like(self.z)
        coeffs = range_coefficients(self._env.realization, self._weights, self._kl, r)
        return self._env.strength * (self._structure @ coeffs)

    def potential(self, r: float) -> np.ndarray:
        if self._structure is None:
            return self.v0
        return self.v0 + self.perturbation(r)


class EnvModel:
    """Waveguide plus an optional frozen internal-wave realization."""

    def __init__(
        self,
        waveguide: WaveguideParams,
        internal_waves: InternalWaveParams,
        realization: Optional[IWRealization] = None,
        strength: float = 1.0,
    ) -> None:
        if realization is not None and realization.phases.shape != (
            internal_waves.j_max,
            internal_waves.l_max,
        ):
            raise GridMismatchError("realization does not match internal-wave params")
        self.waveguide = waveguide
        self.internal_waves = internal_waves
        self.realization = realization
        self.strength = float(strength)
        self._fields: Dict[Tuple[float, float, int], PerturbationField] = {}
        self._lock = threading.Lock()

    @property
    def perturbed(self) -> bool:
        return self.realization is not None and self.strength != 0.0

    def v0(self, z: ArrayLike) -> ArrayLike:
        return munk_potential(z, self.waveguide)

    def perturbation(self, z: ArrayLike, r: float) -> ArrayLike:
        if not self.perturbed:
            _check_window(np.asarray(z, dtype=np.float64), self.waveguide)
            return np.zeros_like(np.asarray(z, dtype=np.float64))
        return eval_perturbation(
            self.realization, z, r, self.waveguide, self.internal_waves, self.strength
        )

    def potential(self, z: ArrayLike, r: float) -> ArrayLike:
        return self.v0(z) + self.perturbation(z, r)

    def on_grid(self, z: np.ndarray) -> PerturbationField:
        """Cached field evaluator for a fixed depth grid."""
        key = (float(z[0]), float(z[-1]), int(len(z)))
        with self._lock:
            cached = self._fields.get(key)
        if cached is not None:
            return cached
        built = PerturbationField(self, z)
        with self._lock:
            return self._fields.setdefault(key, built)
