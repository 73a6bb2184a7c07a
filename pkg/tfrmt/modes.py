"""Waveguide normal modes, modal projections and internal-wave coupling elements."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
import math
import threading
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh_tridiagonal

from tfrmt.config import InternalWaveParams, WaveguideParams
from tfrmt.environment import mode_weights, munk_potential, vertical_structure
from tfrmt.errors import GridMismatchError, ModeCountError
from tfrmt.utils.logger import get_logger


logger = get_logger(__name__)

POINTS_PER_WAVELENGTH = 8
_SIGN_FRACTION = 0.1
_SUPPORT_FRACTION = 1e-12


@dataclass(frozen=True)
class DepthGrid:
    """Interior nodes of a Dirichlet grid on [z_min, z_max]."""

    z_min: float
    z_max: float
    nz: int

    @property
    def h(self) -> float:
        return (self.z_max - self.z_min) / (self.nz + 1)

    @cached_property
    def z(self) -> np.ndarray:
        z = self.z_min + self.h * np.arange(1, self.nz + 1)
        z.flags.writeable = False
        return z

    @classmethod
    def from_waveguide(cls, p: WaveguideParams, nz: int) -> "DepthGrid":
        return cls(z_min=p.z_min, z_max=p.z_max, nz=nz)

    def nearest(self, depth: float) -> int:
        """Index of the grid node closest to ``depth``."""
        if not self.z_min <= depth <= self.z_max:
            raise ValueError(f"depth {depth} km outside [{self.z_min}, {self.z_max}]")
        index = int(round((depth - self.z_min) / self.h)) - 1
        return min(max(index, 0), self.nz - 1)

    def refined(self) -> "DepthGrid":
        """Grid with half the spacing sharing every node of this one."""
        return DepthGrid(self.z_min, self.z_max, 2 * self.nz + 1)


@dataclass(frozen=True, eq=False)
class ModeBasis:
    """Trapped modes at one wavenumber; column m of ``psi`` is psi_m(z; k)."""

    k: float
    grid: DepthGrid
    psi: np.ndarray
    E: np.ndarray
    trapped: int

    @property
    def M(self) -> int:
        return int(self.E.shape[0])

    @property
    def z_grid(self) -> np.ndarray:
        return self.grid.z

    @property
    def empty(self) -> bool:
        return self.M == 0

    def phases(self, r: float) -> np.ndarray:
        """Diagonal of Lambda(r) = diag(exp(-i k E_m r))."""
        return np.exp(-1j * self.k * self.E * r)

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix of the modes (identity up to roundoff)."""
        return self.grid.h * (self.psi.T @ self.psi)

    def metadata(self) -> dict:
        return {"k": self.k, "M": self.M, "trapped": self.trapped, "nz": self.grid.nz}


def _operator(k: float, grid: DepthGrid, p: WaveguideParams) -> Tuple[np.ndarray, np.ndarray]:
    """Diagonal and off-diagonal of -1/2 d2/dz2 + k^2 V0 (eigenvalue k^2 E)."""
    h2 = grid.h**2
    diag = 1.0 / h2 + k**2 * munk_potential(grid.z, p)
    off = np.full(grid.nz - 1, -0.5 / h2)
    return diag, off


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make each column positive at its first lobe."""
    if vectors.shape[1] == 0:
        return vectors
    magnitude = np.abs(vectors)
    threshold = _SIGN_FRACTION * magnitude.max(axis=0)
    first = np.argmax(magnitude >= threshold[None, :], axis=0)
    signs = np.sign(vectors[first, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs[None, :]


def trapped_count(k: float, p: WaveguideParams, grid: DepthGrid) -> int:
    """Number of modes with E_m < V0(z=0)."""
    diag, off = _operator(k, grid, p)
    ceiling = k**2 * float(munk_potential(0.0, p))
    values = eigh_tridiagonal(
        diag, off, eigvals_only=True, select="v", select_range=(0.0, ceiling)
    )
    return int(values.shape[0])


def solve_modes(
    k: float,
    p: WaveguideParams,
    M_requested: Optional[int] = None,
    grid: Optional[DepthGrid] = None,
    nz: int = 8192,
) -> ModeBasis:
    """Solve -1/2 psi'' + k^2 V0 psi = k^2 E psi by symmetric tridiagonal FD.

    With ``M_requested`` unset every trapped mode is returned, possibly none at
    low k. Requesting more than are trapped raises ``ModeCountError``.
    """
    if k <= 0:
        raise ValueError(f"wavenumber k must be > 0 (got {k})")
    grid = grid or DepthGrid.from_waveguide(p, nz)
    trapped = trapped_count(k, p, grid)
    if M_requested is not None and M_requested > trapped:
        raise ModeCountError(M_requested, trapped, k)
    count = trapped if M_requested is None else M_requested
    if count == 0:
        logger.bind(k=k).debug("No trapped modes at k={:.3f} rad/km", k)
        return ModeBasis(k=k, grid=grid, psi=np.zeros((grid.nz, 0)), E=np.zeros(0), trapped=0)

    diag, off = _operator(k, grid, p)
    values, vectors = eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
    E = values / k**2

    p_max = k * math.sqrt(2.0 * E[-1])
    if p_max * grid.h > 2.0 * math.pi / POINTS_PER_WAVELENGTH:
        raise ValueError(
            f"depth grid nz={grid.nz} under-resolves mode {count - 1} at k={k:.3f} rad/km; "
            f"need h <= {2.0 * math.pi / (POINTS_PER_WAVELENGTH * p_max):.2e} km"
        )
    if np.any(np.diff(E) <= 0):
        raise RuntimeError(f"degenerate eigenvalues at k={k:.3f} rad/km")

    psi = _fix_signs(vectors) / math.sqrt(grid.h)
    psi.flags.writeable = False
    E.flags.writeable = False
    logger.bind(k=k).debug("Solved {} of {} trapped modes", count, trapped)
    return ModeBasis(k=k, grid=grid, psi=psi, E=E, trapped=trapped)


def _check_samples(field: np.ndarray, basis: ModeBasis, z: Optional[np.ndarray]) -> None:
    if field.shape[0] != basis.grid.nz:
        raise GridMismatchError(
            f"field has {field.shape[0]} depth samples, basis grid has {basis.grid.nz}"
        )
    if z is not None:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != basis.z_grid.shape or not np.allclose(z, basis.z_grid, rtol=0, atol=1e-12):
            raise GridMismatchError("field depth samples do not match the basis grid")


def project(field: np.ndarray, basis: ModeBasis, z: Optional[np.ndarray] = None) -> np.ndarray:
    """a_m = integral field(z) psi_m(z) dz; columns of a 2-D field project independently."""
    field = np.asarray(field)
    _check_samples(field, basis, z)
    return basis.grid.h * (basis.psi.T @ field)


def reconstruct(coeffs: np.ndarray, basis: ModeBasis) -> np.ndarray:
    """Inverse of ``project`` on the span of the basis."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[0] != basis.M:
        raise GridMismatchError(f"{coeffs.shape[0]} coefficients for a {basis.M}-mode basis")
    return basis.psi @ coeffs


def residual_fraction(field: np.ndarray, basis: ModeBasis) -> float:
    """||field - sum a_m psi_m|| / ||field|| in the quadrature norm."""
    field = np.asarray(field)
    norm = math.sqrt(basis.grid.h) * np.linalg.norm(field)
    if norm == 0.0:
        return 0.0
    residual = field - reconstruct(project(field, basis), basis)
    return float(math.sqrt(basis.grid.h) * np.linalg.norm(residual) / norm)


def mode_overlay(basis: ModeBasis, count: int = 11, scale: Optional[float] = None) -> np.ndarray:
    """psi_n scaled and offset by E_n for plotting modes over V0; shape (nz, count)."""
    count = min(count, basis.M)
    if count == 0:
        return np.zeros((basis.grid.nz, 0))
    if scale is None:
        spacing = float(np.min(np.diff(basis.E[:count]))) if count > 1 else float(basis.E[0])
        scale = 0.4 * spacing / float(np.abs(basis.psi[:, :count]).max())
    return basis.E[None, :count] + scale * basis.psi[:, :count]


@dataclass(frozen=True, eq=False)
class CouplingTensor:
    """G^j_mn = integral g_j psi_m psi_n dz with weights w_jl; V^{j,l}_mn = w_jl G^j_mn."""

    k: float
    G: np.ndarray
    weights: np.ndarray
    kl: np.ndarray

    @property
    def M(self) -> int:
        return int(self.G.shape[1])

    @property
    def j_max(self) -> int:
        return int(self.G.shape[0])

    @property
    def l_max(self) -> int:
        return int(self.weights.shape[1])

    def block(self, j: int, l: int) -> np.ndarray:
        """V^{j,l} as an M x M matrix; j and l count from 1."""
        if not 1 <= j <= self.j_max:
            raise ValueError(f"internal-wave mode j={j} outside [1, {self.j_max}]")
        if not 1 <= l <= self.l_max:
            raise ValueError(f"horizontal wavenumber index l={l} outside [1, {self.l_max}]")
        return self.weights[j - 1, l - 1] * self.G[j - 1]


def _support(psi: np.ndarray) -> slice:
    """Rows where any mode is non-negligible."""
    if psi.shape[1] == 0:
        return slice(0, 0)
    peak = np.abs(psi).max(axis=1)
    rows = np.nonzero(peak > _SUPPORT_FRACTION * peak.max())[0]
    return slice(int(rows[0]), int(rows[-1]) + 1)


def coupling_tensor(
    basis: ModeBasis, wg: WaveguideParams, iw: InternalWaveParams
) -> CouplingTensor:
    """Quadrature of g_j(z) psi_m psi_n over the modes' support."""
    rows = _support(basis.psi)
    psi = basis.psi[rows]
    structure = vertical_structure(basis.z_grid[rows], wg, iw)
    G = np.empty((iw.j_max, basis.M, basis.M))
    for j in range(iw.j_max):
        weighted = structure[:, j, None] * psi
        G[j] = basis.grid.h * (psi.T @ weighted)
        G[j] = 0.5 * (G[j] + G[j].T)
    G.flags.writeable = False
    return CouplingTensor(k=basis.k, G=G, weights=mode_weights(wg, iw), kl=iw.kl_grid)


def coupling_elements(
    basis: ModeBasis,
    wg: WaveguideParams,
    iw: InternalWaveParams,
    j: int,
    l: int,
    rows: Optional[Sequence[int]] = None,
    cols: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """V^{j,l}_mn = integral V_j(z; k_l) psi_m psi_n dz for a block of (m, n)."""
    if not 1 <= j <= iw.j_max:
        raise ValueError(f"internal-wave mode j={j} outside [1, {iw.j_max}]")
    if not 1 <= l <= iw.l_max:
        raise ValueError(f"horizontal wavenumber index l={l} outside [1, {iw.l_max}]")
    rows = np.arange(basis.M) if rows is None else np.asarray(rows, dtype=int)
    cols = np.arange(basis.M) if cols is None else np.asarray(cols, dtype=int)
    if rows.size and (rows.min() < 0 or rows.max() >= basis.M):
        raise IndexError(f"row mode index outside [0, {basis.M})")
    if cols.size and (cols.min() < 0 or cols.max() >= basis.M):
        raise IndexError(f"column mode index outside [0, {basis.M})")
    g = vertical_structure(basis.z_grid, wg, iw)[:, j - 1]
    w = mode_weights(wg, iw)[j - 1, l - 1]
    left = basis.psi[:, rows]
    right = g[:, None] * basis.psi[:, cols]
    return w * basis.grid.h * (left.T @ right)


@dataclass
class ModeCache:
    """Per-k cache of bases and coupling tensors.

    Reads are lock-free dictionary lookups; insertion happens under a lock and
    the first stored value wins.
    """

    waveguide: WaveguideParams
    internal_waves: InternalWaveParams
    grid: DepthGrid
    mode_count: Optional[int] = None
    _bases: Dict[float, ModeBasis] = field(default_factory=dict, repr=False)
    _couplings: Dict[float, CouplingTensor] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def basis(self, k: float) -> ModeBasis:
        key = float(k)
        cached = self._bases.get(key)
        if cached is not None:
            return cached
        try:
            built = solve_modes(key, self.waveguide, self.mode_count, grid=self.grid)
        except ModeCountError as exc:
            logger.bind(k=key).debug("Lowering mode count to {} trapped modes", exc.trapped)
            built = solve_modes(key, self.waveguide, exc.trapped, grid=self.grid)
        with self._lock:
            return self._bases.setdefault(key, built)

    def coupling(self, k: float) -> CouplingTensor:
        key = float(k)
        cached = self._couplings.get(key)
        if cached is not None:
            return cached
        built = coupling_tensor(self.basis(key), self.waveguide, self.internal_waves)
        with self._lock:
            return self._couplings.setdefault(key, built)

    def family(self, k_grid: Sequence[float], workers: int = 1) -> List[ModeBasis]:
        """Bases for every k, solved concurrently, returned in grid order."""
        with ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="tfrmt-modes") as pool:
            return list(pool.map(self.basis, [float(k) for k in k_grid]))

    def coupling_family(self, k_grid: Sequence[float], workers: int = 1) -> List[CouplingTensor]:
        with ThreadPoolExecutor(max_workers=max(1, workers), thread_name_prefix="tfrmt-coupling") as pool:
            return list(pool.map(self.coupling, [float(k) for k in k_grid]))
