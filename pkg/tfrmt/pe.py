"""Split-step parabolic-equation propagation and mode propagator extraction."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import threading
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.fft import dst

from tfrmt.config import ExperimentConfig, WaveguideParams
from tfrmt.environment import EnvModel
from tfrmt.errors import ConfigError, GridMismatchError, UnitarityError
from tfrmt.models import Provenance
from tfrmt.modes import DepthGrid, ModeBasis, project, reconstruct
from tfrmt.utils.logger import get_logger


logger = get_logger(__name__)

# Columns propagated together in one vectorised split-step sweep.
COLUMN_CHUNK = 16


@dataclass(frozen=True)
class PEConfig:
    """Range step, shared depth grid and absorber for one wavenumber."""

    k: float
    grid: DepthGrid
    dr: float = 0.025
    sponge_width: float = 1.5
    sponge_strength: float = 0.01
    guard_modes: int = 10
    unitarity_tol: float = 1e-6
    leak_warn_fraction: float = 0.01
    workers: int = 1

    def validate(self, wg: WaveguideParams) -> None:
        if self.k <= 0:
            raise ValueError(f"wavenumber k must be > 0 (got {self.k})")
        if self.dr <= 0:
            raise ConfigError("numerics.dr", "must be > 0")
        if self.grid.z_min + self.sponge_width > -0.5 or self.grid.z_max - self.sponge_width < wg.H + 1.0:
            raise ConfigError("numerics.sponge_width", "absorber must stay outside [-0.5, H + 1] km")

    @classmethod
    def from_experiment(cls, config: ExperimentConfig, k: float, workers: int = 1) -> "PEConfig":
        num = config.numerics
        wg = config.environment.waveguide
        return cls(
            k=float(k),
            grid=DepthGrid.from_waveguide(wg, num.nz),
            dr=num.dr,
            sponge_width=num.sponge_width,
            sponge_strength=num.sponge_strength,
            guard_modes=num.guard_modes,
            unitarity_tol=num.unitarity_tol,
            leak_warn_fraction=num.leak_warn_fraction,
            workers=workers,
        )


@dataclass(frozen=True, eq=False)
class UnitaryPropagator:
    """Mode propagation matrix U(r; k) with its provenance."""

    U: np.ndarray
    r: float
    k: float
    provenance: Provenance
    r_b: Optional[float] = None
    n_blocks: Optional[int] = None
    seeds: Dict[str, int] = field(default_factory=dict)

    @property
    def M(self) -> int:
        return int(self.U.shape[0])

    def unitarity_defect(self, rows: Optional[int] = None) -> float:
        """max |U U^dagger - I| over the leading ``rows`` rows (all by default)."""
        rows = self.M if rows is None else rows
        if rows == 0:
            return 0.0
        lead = self.U[:rows]
        gram = lead @ lead.conj().T
        return float(np.max(np.abs(gram - np.eye(rows))))

    def header(self) -> dict:
        return {
            "k": self.k,
            "r": self.r,
            "M": self.M,
            "provenance": self.provenance.value,
            "r_b": self.r_b,
            "n_blocks": self.n_blocks,
            "seeds": dict(self.seeds),
        }


def sponge_profile(grid: DepthGrid, width: float, strength: float) -> np.ndarray:
    """Quadratic absorbing ramp alpha(z) over the outer ``width`` km of each edge."""
    z = grid.z
    top = np.clip((grid.z_min + width) - z, 0.0, None)
    bottom = np.clip(z - (grid.z_max - width), 0.0, None)
    return strength * ((top + bottom) / width) ** 2


def kinetic_symbol(grid: DepthGrid) -> np.ndarray:
    """Eigenvalues of -d2/dz2 (second differences, Dirichlet) in DST-I order."""
    q = np.arange(1, grid.nz + 1)
    return 4.0 * np.sin(0.5 * math.pi * q / (grid.nz + 1)) ** 2 / grid.h**2


def _sine_transform(u: np.ndarray) -> np.ndarray:
    # DST-I with orthonormal scaling is its own inverse; parts are real transforms.
    return dst(u.real, type=1, norm="ortho", axis=0) + 1j * dst(u.imag, type=1, norm="ortho", axis=0)


class SplitStepPropagator:
    """Strang-split PE stepper: half potential, kinetic, half potential.

    The kinetic phase uses the exact symbol of the same second-difference operator
    the mode solver diagonalises, so unperturbed modes are eigenvectors of a step.
    """

    def __init__(self, env: EnvModel, cfg: PEConfig) -> None:
        cfg.validate(env.waveguide)
        self.env = env
        self.cfg = cfg
        self._field = env.on_grid(cfg.grid.z)
        self._symbol = kinetic_symbol(cfg.grid)
        self._alpha = sponge_profile(cfg.grid, cfg.sponge_width, cfg.sponge_strength)
        self._kinetic: Dict[float, np.ndarray] = {}
        self._static_half: Dict[float, np.ndarray] = {}
        self._lock = threading.Lock()

    def _kinetic_phase(self, dr: float) -> np.ndarray:
        phase = self._kinetic.get(dr)
        if phase is None:
            phase = np.exp(-1j * dr * self._symbol / (2.0 * self.cfg.k))
            with self._lock:
                phase = self._kinetic.setdefault(dr, phase)
        return phase

    def _half_phase(self, r_mid: float, dr: float) -> np.ndarray:
        if self._field.static:
            cached = self._static_half.get(dr)
            if cached is not None:
                return cached
        k = self.cfg.k
        potential = self._field.potential(r_mid)
        half = np.exp(-0.5j * k * potential * dr) * np.exp(-0.5 * k * self._alpha * dr)
        if self._field.static:
            with self._lock:
                half = self._static_half.setdefault(dr, half)
        return half

    def step(self, u: np.ndarray, r: float, dr: Optional[float] = None) -> np.ndarray:
        """Advance ``u`` (one field or columns of fields) from r to r + dr."""
        dr = self.cfg.dr if dr is None else dr
        u = np.asarray(u, dtype=np.complex128)
        half = self._half_phase(r + 0.5 * dr, dr)
        kinetic = self._kinetic_phase(dr)
        if u.ndim == 2:
            half = half[:, None]
            kinetic = kinetic[:, None]
        u = half * u
        u = _sine_transform(kinetic * _sine_transform(u))
        return half * u

    def propagate(self, u: np.ndarray, r_total: float, r_start: float = 0.0) -> Tuple[np.ndarray, float]:
        """March ``u`` over ``r_total`` km; returns the field and the absorbed energy fraction."""
        u = np.asarray(u, dtype=np.complex128)
        if u.shape[0] != self.cfg.grid.nz:
            raise GridMismatchError(f"field has {u.shape[0]} samples, grid has {self.cfg.grid.nz}")
        if r_total <= 0:
            return u.copy(), 0.0
        n_steps = max(1, math.ceil(r_total / self.cfg.dr - 1e-9))
        dr = r_total / n_steps
        energy_in = float(np.sum(np.abs(u) ** 2))
        r = r_start
        for _ in range(n_steps):
            u = self.step(u, r, dr)
            r += dr
        energy_out = float(np.sum(np.abs(u) ** 2))
        absorbed = 0.0 if energy_in == 0.0 else max(0.0, 1.0 - energy_out / energy_in)
        return u, absorbed


def _warn_leak(absorbed: float, cfg: PEConfig, env: EnvModel) -> None:
    if absorbed > cfg.leak_warn_fraction:
        seed = None if env.realization is None else env.realization.seed
        logger.bind(k=cfg.k, seed=seed).warning(
            "Absorber removed {:.2%} of the field energy at k={:.3f} rad/km", absorbed, cfg.k
        )


def pe_step(u: np.ndarray, env: EnvModel, r: float, cfg: PEConfig) -> np.ndarray:
    """One split step from r to r + dr."""
    return SplitStepPropagator(env, cfg).step(u, r)


def propagate(u: np.ndarray, env: EnvModel, r_total: float, cfg: PEConfig) -> np.ndarray:
    """Propagate from r = 0 to ``r_total``; warns when the absorber takes > 1 %."""
    result, absorbed = SplitStepPropagator(env, cfg).propagate(u, r_total)
    _warn_leak(absorbed, cfg, env)
    return result


def _check_basis(basis: ModeBasis, cfg: PEConfig) -> None:
    if not math.isclose(basis.k, cfg.k, rel_tol=1e-12):
        raise GridMismatchError(f"basis k={basis.k} differs from PE k={cfg.k}")
    if basis.grid != cfg.grid:
        raise GridMismatchError("basis and PE use different depth grids")


def extract_unitary(basis: ModeBasis, env: EnvModel, r_b: float, cfg: PEConfig) -> UnitaryPropagator:
    """Column n of U holds the projections of propagate(psi_n) onto every psi_m.

    Unitarity is checked on the leading M - guard_modes rows, since modes at the
    truncation edge exchange energy with modes outside the basis.
    """
    _check_basis(basis, cfg)
    seeds = {} if env.realization is None else {"iw_seed": env.realization.seed}
    if basis.empty:
        return UnitaryPropagator(np.zeros((0, 0), complex), r_b, basis.k, Provenance.PE, seeds=seeds)
    stepper = SplitStepPropagator(env, cfg)
    chunks = [
        np.arange(start, min(start + COLUMN_CHUNK, basis.M))
        for start in range(0, basis.M, COLUMN_CHUNK)
    ]

    def _run(columns: np.ndarray) -> Tuple[np.ndarray, float]:
        out, absorbed = stepper.propagate(basis.psi[:, columns].astype(np.complex128), r_b)
        return project(out, basis), absorbed

    with ThreadPoolExecutor(max_workers=max(1, cfg.workers), thread_name_prefix="tfrmt-pe") as pool:
        results = list(pool.map(_run, chunks))

    U = np.concatenate([block for block, _ in results], axis=1)
    _warn_leak(max(absorbed for _, absorbed in results), cfg, env)
    propagator = UnitaryPropagator(U=U, r=r_b, k=basis.k, provenance=Provenance.PE, seeds=seeds)

    rows = basis.M - cfg.guard_modes if basis.M > cfg.guard_modes else basis.M
    defect = propagator.unitarity_defect(rows)
    logger.bind(k=basis.k, defect=defect).debug("PE propagator over {} km, M={}", r_b, basis.M)
    if defect > cfg.unitarity_tol:
        raise UnitarityError(defect, cfg.unitarity_tol)
    return propagator


def pe_mode_amplitudes(
    a: np.ndarray, basis: ModeBasis, env: EnvModel, r: float, cfg: PEConfig
) -> np.ndarray:
    """U(r) a without forming U: propagate sum a_n psi_n and project."""
    _check_basis(basis, cfg)
    if basis.empty:
        return np.zeros(0, dtype=np.complex128)
    start = reconstruct(np.asarray(a, dtype=np.complex128), basis)
    out, absorbed = SplitStepPropagator(env, cfg).propagate(start, r)
    _warn_leak(absorbed, cfg, env)
    return project(out, basis)
