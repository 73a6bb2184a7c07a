"""Statistics and tabular exports for timefront ensembles."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
import json
import math
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import linregress

from tfrmt.rmt import VarianceProfile
from tfrmt.timefront import IntensityGrid
from tfrmt.utils.levels import to_db
from tfrmt.utils.logger import get_logger


logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class TraceTable:
    """Intensity time series at the grid depths nearest the requested ones."""

    requested: np.ndarray
    depths: np.ndarray
    tau: np.ndarray
    linear: np.ndarray
    reference: float

    @property
    def offsets(self) -> np.ndarray:
        return self.depths - self.requested

    @property
    def db(self) -> np.ndarray:
        return to_db(self.linear, reference=self.reference)


def depth_indices(z: np.ndarray, depths: Sequence[float]) -> np.ndarray:
    """Nearest-sample indices; depths outside the sampled window are rejected."""
    z = np.asarray(z)
    indices = []
    for depth in depths:
        if not z[0] <= depth <= z[-1]:
            raise ValueError(f"trace depth {depth} km outside [{z[0]:.3f}, {z[-1]:.3f}] km")
        indices.append(int(np.argmin(np.abs(z - depth))))
    return np.asarray(indices, dtype=int)


def traces(grid: IntensityGrid, depths: Sequence[float]) -> TraceTable:
    indices = depth_indices(grid.z, depths)
    for requested, index in zip(depths, indices):
        if not math.isclose(grid.z[index], requested, abs_tol=1e-12):
            logger.debug("Trace depth {} km mapped to {:.4f} km", requested, grid.z[index])
    return TraceTable(
        requested=np.asarray(depths, dtype=np.float64),
        depths=grid.z[indices],
        tau=grid.tau,
        linear=grid.values[indices],
        reference=grid.peak,
    )


def write_rows(path: Path, rows: List[Dict[str, object]], fieldnames: List[str]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


def write_traces_csv(path: Path, table: TraceTable) -> Path:
    """Long format: one row per (depth, tau) with linear and dB intensity."""
    db = table.db
    rows = []
    for d, (requested, depth) in enumerate(zip(table.requested, table.depths)):
        for n, tau in enumerate(table.tau):
            rows.append(
                {
                    "depth_km": f"{requested:.6g}",
                    "grid_depth_km": f"{depth:.9g}",
                    "offset_km": f"{depth - requested:.3e}",
                    "tau_s": f"{tau:.9g}",
                    "intensity": repr(float(table.linear[d, n])),
                    "intensity_db": f"{db[d, n]:.6f}",
                }
            )
    fields = ["depth_km", "grid_depth_km", "offset_km", "tau_s", "intensity", "intensity_db"]
    return write_rows(path, rows, fields)


@dataclass(frozen=True)
class DecayFit:
    """Slope of ln(y) against x with its standard error."""

    slope: float
    stderr: float
    points: int


def log_decay_slope(x: np.ndarray, y: np.ndarray) -> DecayFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = y > 0
    if np.count_nonzero(keep) < 3:
        raise ValueError("need at least three positive samples for a decay fit")
    fit = linregress(x[keep], np.log(y[keep]))
    return DecayFit(slope=float(fit.slope), stderr=float(fit.stderr), points=int(np.count_nonzero(keep)))


@dataclass(frozen=True)
class PowerLawFit:
    exponent: float
    prefactor: float
    r_squared: float


def power_law_fit(x: np.ndarray, y: np.ndarray) -> PowerLawFit:
    """Fit y = A x^p in log-log space."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (x > 0) & (y > 0)
    if np.count_nonzero(keep) < 3:
        raise ValueError("need at least three positive samples for a power-law fit")
    fit = linregress(np.log(x[keep]), np.log(y[keep]))
    return PowerLawFit(
        exponent=float(fit.slope), prefactor=float(math.exp(fit.intercept)), r_squared=float(fit.rvalue**2)
    )


def branch_lag(trace: np.ndarray, reference: np.ndarray) -> int:
    """Lag in time cells maximising the cross-correlation; positive when ``trace`` is late."""
    a = np.asarray(trace, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    a = a - a.mean()
    b = b - b.mean()
    if not np.any(a) or not np.any(b):
        return 0
    correlation = np.correlate(a, b, mode="full")
    return int(np.argmax(correlation)) - (len(b) - 1)


def jackknife(samples: np.ndarray, statistic: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Leave-one-out estimate and standard error of ``statistic`` over axis 0."""
    samples = np.asarray(samples)
    n = samples.shape[0]
    full = np.asarray(statistic(samples), dtype=np.float64)
    if n < 2:
        return full, np.zeros_like(full)
    leave_one_out = np.stack(
        [np.asarray(statistic(np.delete(samples, i, axis=0)), dtype=np.float64) for i in range(n)]
    )
    mean = leave_one_out.mean(axis=0)
    error = np.sqrt((n - 1) / n * np.sum((leave_one_out - mean) ** 2, axis=0))
    return full, error


@dataclass(frozen=True)
class VarianceRow:
    m: int
    n: int
    offset: int
    analytic: float
    pe_var: float
    pe_err: float
    rmt_var: float
    rmt_err: float

    @property
    def pe_ratio(self) -> float:
        return self.pe_var / self.analytic if self.analytic > 0 else float("nan")

    @property
    def rmt_ratio(self) -> float:
        return self.rmt_var / self.analytic if self.analytic > 0 else float("nan")

    def to_dict(self) -> dict:
        row = asdict(self)
        row.update({"pe_ratio": self.pe_ratio, "rmt_ratio": self.rmt_ratio})
        return row


def element_variance(samples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Sample variance of complex matrix elements over axis 0 and its standard error."""
    deviation = np.abs(samples - samples.mean(axis=0)) ** 2
    n = samples.shape[0]
    variance = deviation.sum(axis=0) / max(n - 1, 1)
    error = deviation.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(variance)
    return variance, error


def variance_ratio_table(
    pe: np.ndarray,
    rmt: np.ndarray,
    profile: VarianceProfile,
    max_offset: int = 10,
    m_min: int = 5,
) -> List[VarianceRow]:
    """Element variances of PE and RMT propagators against 4 s_mn^2 in the band."""
    M = profile.M
    if pe.shape[1:] != (M, M) or rmt.shape[1:] != (M, M):
        raise ValueError(f"samples must be N x {M} x {M}")
    pe_var, pe_err = element_variance(pe)
    rmt_var, rmt_err = element_variance(rmt)
    analytic = 4.0 * profile.variance
    rows = []
    for m in range(m_min, M // 2 + 1):
        for n in range(max(0, m - max_offset), min(M, m + max_offset + 1)):
            if n == m:
                continue
            rows.append(
                VarianceRow(
                    m=m, n=n, offset=abs(m - n), analytic=float(analytic[m, n]),
                    pe_var=float(pe_var[m, n]), pe_err=float(pe_err[m, n]),
                    rmt_var=float(rmt_var[m, n]), rmt_err=float(rmt_err[m, n]),
                )
            )
    return rows


def band_means(rows: Sequence[VarianceRow], key: str) -> Tuple[np.ndarray, np.ndarray]:
    """Mean of a variance column per |m - n|."""
    offsets = sorted({row.offset for row in rows})
    means = [np.mean([getattr(row, key) for row in rows if row.offset == d]) for d in offsets]
    return np.asarray(offsets, dtype=np.float64), np.asarray(means)


@dataclass(frozen=True, eq=False)
class DepthProfile:
    """Intensity against depth at tau = 0 for several curves."""

    z: np.ndarray
    curves: Dict[str, np.ndarray]
    fits: Dict[str, DecayFit]
    fit_window: Tuple[float, float]


def mixing_depth_profile(
    grids: Mapping[str, IntensityGrid], fit_window: Tuple[float, float] = (1.0, 3.0)
) -> DepthProfile:
    """Extract the tau = 0 column of each grid and fit its log-decay below the axis."""
    if not grids:
        raise ValueError("no curves supplied")
    first = next(iter(grids.values()))
    for name, grid in grids.items():
        if not np.array_equal(grid.z, first.z) or not np.array_equal(grid.tau, first.tau):
            raise ValueError(f"curve {name!r} is on a different grid")
    column = int(np.argmin(np.abs(first.tau)))
    below = (first.z >= fit_window[0]) & (first.z <= fit_window[1])
    curves = {name: grid.values[:, column] for name, grid in grids.items()}
    fits = {name: log_decay_slope(first.z[below], values[below]) for name, values in curves.items()}
    return DepthProfile(z=first.z, curves=curves, fits=fits, fit_window=fit_window)


def write_depth_profile_csv(path: Path, profile: DepthProfile) -> Path:
    names = list(profile.curves)
    rows = []
    for i, depth in enumerate(profile.z):
        row: Dict[str, object] = {"z_km": f"{depth:.9g}"}
        for name in names:
            row[name] = repr(float(profile.curves[name][i]))
        rows.append(row)
    return write_rows(path, rows, ["z_km", *names])


def finale_mask(unperturbed: IntensityGrid, fraction: float = 1e-3, z_range: Tuple[float, float] = (0.0, 5.0)) -> np.ndarray:
    """Cells between branches: inside the arrival window but below ``fraction`` of the peak."""
    values = unperturbed.values
    quiet = values < fraction * unperturbed.peak
    active_times = np.nonzero(values.max(axis=0) >= fraction * unperturbed.peak)[0]
    window = np.zeros(values.shape[1], dtype=bool)
    if active_times.size:
        window[active_times[0] : active_times[-1] + 1] = True
    depths = (unperturbed.z >= z_range[0]) & (unperturbed.z <= z_range[1])
    return quiet & window[None, :] & depths[:, None]


@dataclass
class EnsembleSlices:
    """Per-member reductions kept for jackknife errors without storing full grids."""

    traces: List[np.ndarray] = field(default_factory=list)
    column: List[np.ndarray] = field(default_factory=list)
    axis_row: List[np.ndarray] = field(default_factory=list)
    background: List[float] = field(default_factory=list)
    energy: List[float] = field(default_factory=list)
    runtime_s: List[float] = field(default_factory=list)

    def add(
        self,
        intensity: np.ndarray,
        trace_rows: np.ndarray,
        column: int,
        axis_row: int,
        mask: np.ndarray,
        energy: float,
        runtime_s: float,
    ) -> None:
        self.traces.append(intensity[trace_rows].copy())
        self.column.append(intensity[:, column].copy())
        self.axis_row.append(intensity[axis_row].copy())
        self.background.append(float(intensity[mask].mean()) if mask.any() else 0.0)
        self.energy.append(energy)
        self.runtime_s.append(runtime_s)

    @property
    def count(self) -> int:
        return len(self.energy)


def _mean_and_stderr(values: Sequence[float]) -> Tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return float(values.mean()), 0.0
    return float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size))


def _relative_spread(energies: np.ndarray) -> float:
    return float(np.ptp(energies) / np.mean(energies))


def _decay_slope_of_mean(x: np.ndarray) -> Callable[[np.ndarray], float]:
    return lambda samples: log_decay_slope(x, samples.mean(axis=0)).slope


@dataclass
class ComparisonReport:
    """PE against RMT statistics with Monte-Carlo errors."""

    range_km: float
    members: Dict[str, int]
    K: int
    variance_table: List[dict] = field(default_factory=list)
    band_fits: Dict[str, dict] = field(default_factory=dict)
    branch_lags: List[dict] = field(default_factory=list)
    finale: Dict[str, dict] = field(default_factory=dict)
    background: Dict[str, dict] = field(default_factory=dict)
    energy_spread: float = 0.0
    energy_spread_err: float = 0.0
    runtimes: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path: Path) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def compare_slices(
    report: ComparisonReport,
    pe: EnsembleSlices,
    rmt: EnsembleSlices,
    z: np.ndarray,
    tau: np.ndarray,
    trace_depths: np.ndarray,
    fit_window: Tuple[float, float] = (1.0, 3.0),
    time_span: int = 20,
) -> ComparisonReport:
    """Fill the timefront part of ``report`` from per-member slices."""
    sets = {"pe": pe, "rmt": rmt}
    pe_traces = np.stack(pe.traces)
    rmt_traces = np.stack(rmt.traces)
    rmt_mean = rmt_traces.mean(axis=0)
    pe_mean = pe_traces.mean(axis=0)
    for d, depth in enumerate(trace_depths):
        lag = branch_lag(rmt_mean[d], pe_mean[d])
        _, err_rmt = jackknife(rmt_traces[:, d], lambda s, ref=pe_mean[d]: branch_lag(s.mean(axis=0), ref))
        _, err_pe = jackknife(pe_traces[:, d], lambda s, ref=rmt_mean[d]: branch_lag(ref, s.mean(axis=0)))
        report.branch_lags.append(
            {"depth_km": float(depth), "lag_cells": lag, "error_cells": float(math.hypot(err_rmt, err_pe))}
        )

    below = (z >= fit_window[0]) & (z <= fit_window[1])
    start = int(np.argmin(np.abs(tau)))
    after = slice(start, min(start + time_span, tau.size))
    for name, slices in sets.items():
        columns = np.stack(slices.column)[:, below]
        rows = np.stack(slices.axis_row)[:, after]
        depth_slope, depth_err = jackknife(columns, _decay_slope_of_mean(z[below]))
        time_slope, time_err = jackknife(rows, _decay_slope_of_mean(tau[after]))
        report.finale[name] = {
            "depth_slope_per_km": float(depth_slope),
            "depth_slope_err": float(depth_err),
            "time_slope_per_s": float(time_slope),
            "time_slope_err": float(time_err),
        }
        mean, stderr = _mean_and_stderr(slices.background)
        report.background[name] = {"mean": mean, "stderr": stderr}
        runtime, runtime_err = _mean_and_stderr(slices.runtime_s)
        report.runtimes[f"{name}_per_member_s"] = runtime
        report.runtimes[f"{name}_per_member_s_err"] = runtime_err
    energies = np.concatenate([pe.energy, rmt.energy])
    if energies.size:
        spread, spread_err = jackknife(energies, _relative_spread)
        report.energy_spread = float(spread)
        report.energy_spread_err = float(spread_err)
    pe_time = report.runtimes.get("pe_per_member_s", 0.0)
    rmt_time = report.runtimes.get("rmt_per_member_s", 0.0)
    if pe_time > 0 and rmt_time > 0:
        ratio = pe_time / rmt_time
        report.runtimes["pe_over_rmt"] = ratio
        report.runtimes["pe_over_rmt_err"] = ratio * math.hypot(
            report.runtimes["pe_per_member_s_err"] / pe_time,
            report.runtimes["rmt_per_member_s_err"] / rmt_time,
        )
    return report


def _band_power_law(samples: np.ndarray, max_offset: int, m_min: int) -> np.ndarray:
    """(exponent, prefactor, R^2) of the band-mean element variance against |m - n|."""
    variance, _ = element_variance(samples)
    M = variance.shape[0]
    offsets, means = [], []
    for d in range(1, max_offset + 1):
        values = [variance[m, n] for m in range(m_min, M // 2 + 1) for n in (m - d, m + d) if 0 <= n < M]
        if values:
            offsets.append(d)
            means.append(np.mean(values))
    fit = power_law_fit(np.asarray(offsets, dtype=np.float64), np.asarray(means))
    return np.array([fit.exponent, fit.prefactor, fit.r_squared])


def _band_fit_errors(samples: np.ndarray, max_offset: int, m_min: int) -> Optional[np.ndarray]:
    """Leave-one-member-out errors of the band power law; None when a subsample cannot be fitted."""
    if samples.shape[0] < 3:
        return None
    try:
        _, errors = jackknife(samples, lambda s: _band_power_law(s, max_offset, m_min))
    except ValueError as exc:
        logger.bind(error=str(exc)).warning("Band power-law errors unavailable")
        return None
    return errors


def compare_variances(
    report: ComparisonReport,
    pe: np.ndarray,
    rmt: np.ndarray,
    profile: VarianceProfile,
    max_offset: int = 10,
    m_min: int = 5,
) -> ComparisonReport:
    """Fill the building-block part of ``report`` from sampled propagators at one k."""
    rows = variance_ratio_table(pe, rmt, profile, max_offset, m_min)
    report.variance_table = [row.to_dict() for row in rows]
    sampled = {"pe": pe, "rmt": rmt}
    for name, key in (("pe", "pe_var"), ("rmt", "rmt_var"), ("analytic", "analytic")):
        offsets, means = band_means(rows, key)
        try:
            fit = power_law_fit(offsets, means)
        except ValueError as exc:
            logger.bind(error=str(exc)).warning("Band power-law fit skipped for {}", name)
            continue
        entry = asdict(fit)
        # The analytic curve carries no sampling error.
        errors: Optional[np.ndarray] = np.zeros(3)
        if name in sampled:
            errors = _band_fit_errors(sampled[name], max_offset, m_min)
        for i, label in enumerate(("exponent", "prefactor", "r_squared")):
            entry[f"{label}_err"] = None if errors is None else float(errors[i])
        report.band_fits[name] = entry
    return report
