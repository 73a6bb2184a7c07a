"""Experiment orchestration for TimefrontRMT commands."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
import math
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from tfrmt.analysis import (
    ComparisonReport,
    EnsembleSlices,
    compare_slices,
    compare_variances,
    depth_indices,
    finale_mask,
    mixing_depth_profile,
    traces,
    write_depth_profile_csv,
    write_rows,
    write_traces_csv,
)
from tfrmt.config import ExperimentConfig
from tfrmt.environment import (
    EnvModel,
    mode_weights,
    munk_potential,
    range_coefficients,
    sample_iw_realization,
    vertical_structure,
)
from tfrmt.errors import ConfigError
from tfrmt.gridfile import write_db_grid, write_grid
from tfrmt.manifest import HISTORY_NAME, MANIFEST_NAME, OutputSession, RunHistory, RunManifest
from tfrmt.models import COMMAND_CHOICES, METHOD_CHOICES, Provenance
from tfrmt.modes import DepthGrid, ModeBasis, ModeCache, mode_overlay
from tfrmt.pe import PEConfig, extract_unitary, pe_mode_amplitudes
from tfrmt.rmt import VarianceProfile, apply_member, band_profile, draw_member, variance_profile
from tfrmt.timefront import (
    IntensityGrid,
    TimefrontGrid,
    brute_force_mixing_front,
    build_k_grid,
    mixing_front,
    source_family,
    synthesize_amplitudes,
    unperturbed_amplitudes,
)
from tfrmt.utils.levels import IntensityAccumulator
from tfrmt.utils.logger import get_logger
from tfrmt.utils.seeds import PE_STREAM, derive_seed


logger = get_logger(__name__)

# Range sampling of exported internal-wave transects.
IW_RANGE_STEP = 0.1
IW_MAX_COLUMNS = 2000


@dataclass
class RunOptions:
    """Per-invocation choices that are not part of the experiment config."""

    method: str = "rmt"
    k: Optional[float] = None
    depths: Optional[List[float]] = None
    pe_members: int = 0

    def validate(self) -> None:
        if self.method not in METHOD_CHOICES:
            raise ConfigError("method", f"must be one of {', '.join(METHOD_CHOICES)}")
        if self.k is not None and self.k <= 0:
            raise ConfigError("k", "must be > 0")
        if self.pe_members < 0:
            raise ConfigError("pe_members", "must be >= 0")


@dataclass
class _Family:
    """Bases, source amplitudes and (optionally) variance profiles on one k-grid."""

    k_grid: np.ndarray
    bases: List[ModeBasis]
    amplitudes: List[np.ndarray]
    profiles: Optional[List[VarianceProfile]] = None


class ExperimentRunner:
    """Runs one command of an experiment and records its outputs."""

    def __init__(self, config: ExperimentConfig, workers: int = 1) -> None:
        self.config = config
        self.workers = max(1, workers)
        env = config.environment
        self.grid = DepthGrid.from_waveguide(env.waveguide, config.numerics.nz)
        self.modes = ModeCache(env.waveguide, env.internal_waves, self.grid, config.numerics.mode_count)
        self.root = Path(config.outputs.directory)
        self.history = RunHistory(self.root / HISTORY_NAME)
        self._commands: Dict[str, Callable[[OutputSession, RunOptions, RunManifest], None]] = {
            "modes": self._run_modes,
            "iw-field": self._run_iw_field,
            "pe-unitary": self._run_pe_unitary,
            "rmt-ensemble": self._run_rmt_ensemble,
            "timefront": self._run_timefront,
            "average": self._run_average,
            "mixing-front": self._run_mixing_front,
            "compare": self._run_compare,
        }
        assert set(self._commands) == {name for name, _ in COMMAND_CHOICES}

    # ------------------------------------------------------------------ entry

    def run(self, command: str, options: Optional[RunOptions] = None) -> RunManifest:
        """Execute ``command``; outputs are removed again if it fails."""
        options = options or RunOptions()
        options.validate()
        handler = self._commands.get(command)
        if handler is None:
            raise ConfigError("command", f"unknown command {command!r}")
        config_hash = self.config.config_hash()
        manifest = RunManifest(
            command=command,
            config_hash=config_hash,
            seeds={"master_seed": self.config.ensemble.master_seed},
            parameters={key: value for key, value in asdict(options).items() if value is not None},
        )
        logger.bind(command=command).info("Starting {} (config {})", command, config_hash)
        started = time.perf_counter()
        status = "failed"
        try:
            with OutputSession(self.root / command) as session:
                handler(session, options, manifest)
                for path in session.written:
                    manifest.add_output(path, session.root)
                manifest.write(session.path(MANIFEST_NAME))
            status = "ok"
        finally:
            elapsed = time.perf_counter() - started
            self.history.append(command, config_hash, status, elapsed)
            logger.bind(command=command).info("{} finished: {} in {:.1f} s", command, status, elapsed)
        return manifest

    # ---------------------------------------------------------------- helpers

    @property
    def _c0(self) -> float:
        return self.config.environment.waveguide.c0

    def _k0(self, options: RunOptions) -> float:
        return options.k if options.k is not None else self.config.source.k0(self._c0)

    def _k_grid(self, count: int) -> np.ndarray:
        num = self.config.numerics
        return build_k_grid(self.config.source, self._c0, count, num.k_sigmas, num.k_clip_tol)

    def _header(self, **extra) -> dict:
        wg = self.config.environment.waveguide
        header = {
            "config_hash": self.config.config_hash(),
            "master_seed": self.config.ensemble.master_seed,
            "B_km": wg.B,
            "gamma_per_km": wg.gamma,
            "source": asdict(self.config.source),
            "strength": self.config.ensemble.strength,
        }
        header.update(extra)
        return header

    def _env(self, member: int, strength: Optional[float] = None) -> EnvModel:
        env = self.config.environment
        seed = derive_seed(self.config.ensemble.master_seed, PE_STREAM, member)
        realization = sample_iw_realization(seed, env.internal_waves)
        strength = self.config.ensemble.strength if strength is None else strength
        return EnvModel(env.waveguide, env.internal_waves, realization, strength)

    def _pe_config(self, k: float, workers: int = 1) -> PEConfig:
        return PEConfig.from_experiment(self.config, k, workers=workers)

    def _family(self, k_grid: np.ndarray, with_profiles: bool = False) -> _Family:
        bases = self.modes.family(k_grid, self.workers)
        empty = sum(1 for basis in bases if basis.empty)
        if empty:
            logger.info("{} of {} wavenumbers trap no modes", empty, len(bases))
        amplitudes = source_family(self.config.source, bases, self._c0)
        family = _Family(k_grid=k_grid, bases=bases, amplitudes=amplitudes)
        if with_profiles:
            couplings = self.modes.coupling_family(k_grid, self.workers)
            ens = self.config.ensemble
            family.profiles = [
                variance_profile(basis, coupling, ens.r_b, ens.strength)
                for basis, coupling in zip(bases, couplings)
            ]
        return family

    def _stride(self) -> int:
        return self.config.numerics.depth_stride

    def _synthesize(self, coeffs: Sequence[np.ndarray], family: _Family, r: float, provenance: Provenance) -> TimefrontGrid:
        return synthesize_amplitudes(
            coeffs, family.bases, family.k_grid, self.config.source, self._c0, r,
            self._stride(), provenance=provenance, workers=self.workers,
        )

    def _rmt_member(self, family: _Family, member: int, spec=None) -> TimefrontGrid:
        spec = spec or self.config.ensemble
        coeffs = apply_member(spec, member, family.profiles, family.bases, family.amplitudes)
        return self._synthesize(coeffs, family, spec.range_km, Provenance.RMT)

    def _pe_member(self, family: _Family, member: int, r: float) -> TimefrontGrid:
        env = self._env(member)

        def _coeffs(index: int) -> np.ndarray:
            basis = family.bases[index]
            if basis.empty:
                return family.amplitudes[index]
            return pe_mode_amplitudes(family.amplitudes[index], basis, env, r, self._pe_config(basis.k))

        with ThreadPoolExecutor(max_workers=self.workers, thread_name_prefix="tfrmt-pe-k") as pool:
            coeffs = list(pool.map(_coeffs, range(len(family.bases))))
        return self._synthesize(coeffs, family, r, Provenance.PE)

    def _unperturbed(self, family: _Family, r: float) -> TimefrontGrid:
        coeffs = [unperturbed_amplitudes(a, b, r) for a, b in zip(family.amplitudes, family.bases)]
        return self._synthesize(coeffs, family, r, Provenance.UNPERTURBED)

    def _trace_depths(self, options: RunOptions) -> List[float]:
        return list(options.depths or self.config.outputs.trace_depths)

    def _write_intensity(
        self, session: OutputSession, name: str, grid: IntensityGrid, options: RunOptions, meta: dict
    ) -> None:
        formats = self.config.outputs.formats
        header = self._header(r_km=grid.r, members=grid.members, **meta)
        if "grid" in formats:
            arrays = {"intensity": grid.values, "z": grid.z, "tau": grid.tau}
            if grid.stderr is not None:
                arrays["stderr"] = grid.stderr
            write_grid(session.path(f"{name}.grid"), arrays, header)
        if "db" in formats:
            write_db_grid(session.path(f"{name}.db.grid"), grid.values, grid.z, grid.tau, header)
        if "csv" in formats:
            write_traces_csv(session.path(f"{name}_traces.csv"), traces(grid, self._trace_depths(options)))

    @staticmethod
    def _intensity_of(timefront: TimefrontGrid, members: int = 1) -> IntensityGrid:
        return IntensityGrid(timefront.intensity, timefront.z, timefront.tau, timefront.r, members)

    # --------------------------------------------------------------- commands

    def _run_modes(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        k = self._k0(options)
        basis = self.modes.basis(k)
        wg = self.config.environment.waveguide
        logger.bind(k=k).info("{} modes trapped at k={:.3f} rad/km", basis.M, k)
        manifest.parameters.update({"k": k, "M": basis.M})
        write_grid(
            session.path("modes.grid"),
            {
                "z": basis.z_grid,
                "psi": basis.psi,
                "E": basis.E,
                "v0": munk_potential(basis.z_grid, wg),
                "overlay": mode_overlay(basis),
            },
            self._header(**basis.metadata()),
        )
        harmonic = 0.5 * math.sqrt(2.0 * wg.gamma / wg.B) / k
        rows = [
            {"m": m, "E": repr(float(E)), "harmonic_E": repr(harmonic * (2 * m + 1))}
            for m, E in enumerate(basis.E)
        ]
        write_rows(session.path("modes.csv"), rows, ["m", "E", "harmonic_E"])

    def _run_iw_field(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        env = self._env(0)
        iw = self.config.environment.internal_waves
        rng = self.config.ensemble.range_km
        step = max(IW_RANGE_STEP, rng / IW_MAX_COLUMNS)
        r = np.arange(0.0, rng + 0.5 * step, step)
        z = self.grid.z[:: self._stride()]
        structure = env.strength * vertical_structure(z, env.waveguide, iw)
        weights = mode_weights(env.waveguide, iw)
        field = np.stack(
            [structure @ range_coefficients(env.realization, weights, iw.kl_grid, x) for x in r], axis=1
        )
        manifest.seeds["iw_seed"] = env.realization.seed
        rms = float(np.sqrt(np.mean(field**2)))
        logger.info("Internal-wave field rms {:.2e} over {} x {} samples", rms, z.size, r.size)
        write_grid(
            session.path("iw_field.grid"),
            {"z": z, "r": r, "dv": field},
            self._header(realization=env.realization.to_dict(), rms=rms),
        )

    def _run_pe_unitary(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        k = self._k0(options)
        basis = self.modes.basis(k)
        cfg = self._pe_config(k, self.workers)
        r = self.config.ensemble.range_km
        for member in range(self.config.ensemble.members):
            env = self._env(member)
            propagator = extract_unitary(basis, env, r, cfg)
            write_grid(
                session.path(f"pe_unitary/member_{member:04d}.grid"),
                {"U": propagator.U, "E": basis.E},
                self._header(**propagator.header(), member=member),
            )
            logger.bind(member=member).info(
                "PE member {} unitarity defect {:.2e}", member, propagator.unitarity_defect()
            )
        manifest.parameters.update({"k": k, "M": basis.M, "r_km": r})

    def _run_rmt_ensemble(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        k = self._k0(options)
        basis = self.modes.basis(k)
        ens = self.config.ensemble
        profile = variance_profile(basis, self.modes.coupling(k), ens.r_b, ens.strength)
        bands = band_profile(profile)
        write_grid(
            session.path("variance_profile.grid"),
            {"s": profile.s, "E": basis.E, "band_offsets": bands.offsets, "band_mean": bands.mean,
             "band_spread": bands.relative_spread},
            self._header(k=k, M=basis.M, r_b=ens.r_b),
        )
        for member in range(ens.members):
            propagator = draw_member(ens, member, [profile], [basis])[0]
            write_grid(
                session.path(f"rmt_unitary/member_{member:04d}.grid"),
                {"U": propagator.U},
                self._header(**propagator.header(), member=member),
            )
        manifest.parameters.update({"k": k, "M": basis.M, "n_blocks": ens.n_blocks})

    def _run_timefront(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        num = self.config.numerics
        r = self.config.ensemble.range_km
        use_pe = options.method == "pe"
        family = self._family(self._k_grid(num.k_count if use_pe else num.k_count_rmt), with_profiles=not use_pe)
        timefront = self._pe_member(family, 0, r) if use_pe else self._rmt_member(family, 0)
        h = self.grid.h * self._stride()
        header = self._header(r_km=r, K=len(family.k_grid), method=options.method)
        if "grid" in self.config.outputs.formats:
            write_grid(
                session.path("timefront.grid"),
                {"phi": timefront.phi, "z": timefront.z, "tau": timefront.tau, "k": timefront.k_grid},
                header,
            )
        intensity = self._intensity_of(timefront)
        formats = self.config.outputs.formats
        if "db" in formats:
            write_db_grid(session.path("timefront.db.grid"), intensity.values, intensity.z, intensity.tau, header)
        if "csv" in formats:
            write_traces_csv(session.path("timefront_traces.csv"), traces(intensity, self._trace_depths(options)))
        manifest.parameters.update({"K": len(family.k_grid), "energy": timefront.energy(h)})

    def _run_average(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        num = self.config.numerics
        ens = self.config.ensemble
        use_pe = options.method == "pe"
        family = self._family(self._k_grid(num.k_count if use_pe else num.k_count_rmt), with_profiles=not use_pe)
        accumulator = IntensityAccumulator()
        for member in range(ens.members):
            timefront = self._pe_member(family, member, ens.range_km) if use_pe else self._rmt_member(family, member)
            accumulator.push(timefront.intensity)
            logger.bind(member=member).debug("Member {} of {} done", member + 1, ens.members)
        average = IntensityGrid(
            accumulator.mean, timefront.z, timefront.tau, ens.range_km, accumulator.count,
            stderr=accumulator.standard_error,
        )
        meta = {"K": len(family.k_grid), "method": options.method}
        self._write_intensity(session, "average", average, options, meta)
        base = self._intensity_of(self._unperturbed(family, ens.range_km))
        self._write_intensity(session, "unperturbed", base, options, meta)
        manifest.parameters.update({"K": len(family.k_grid), "members": accumulator.count})

    def _run_mixing_front(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        num = self.config.numerics
        ens = self.config.ensemble
        count = num.k_count if options.pe_members else num.k_count_rmt
        family = self._family(self._k_grid(count), with_profiles=True)
        src = self.config.source
        delta = mixing_front(
            family.profiles, family.bases, src, family.k_grid, self._c0, ens.r_b,
            self._stride(), num.k_clip_tol,
        )
        brute = brute_force_mixing_front(
            family.profiles, family.bases, src, family.k_grid, self._c0, ens.r_b,
            ens.members, ens.master_seed, self._stride(), clip_tol=num.k_clip_tol,
        )
        base = brute.unperturbed
        curves: Dict[str, IntensityGrid] = {
            "unperturbed": base,
            "prediction": replace(base, values=base.values + delta.values),
            "rmt_average": replace(base, values=base.values + brute.delta_intensity.values, members=ens.members),
        }
        if options.pe_members:
            accumulator = IntensityAccumulator()
            for member in range(options.pe_members):
                accumulator.push(self._pe_member(family, member, ens.r_b).intensity)
            curves["pe_average"] = replace(base, values=accumulator.mean, members=accumulator.count)
        meta = {"K": len(family.k_grid)}
        self._write_intensity(session, "mixing_front", delta, options, meta)
        self._write_intensity(session, "brute_force", brute.delta_intensity, options, meta)
        wg = self.config.environment.waveguide
        profile = mixing_depth_profile(curves, fit_window=(wg.z_a, wg.z_a + 2.0))
        write_depth_profile_csv(session.path("depth_profile.csv"), profile)
        manifest.parameters.update(
            {
                "K": len(family.k_grid),
                "members": ens.members,
                "depth_slopes": {name: fit.slope for name, fit in profile.fits.items()},
                "min_delta": float(delta.values.min()),
            }
        )

    def _run_compare(self, session: OutputSession, options: RunOptions, manifest: RunManifest) -> None:
        num = self.config.numerics
        ens = self.config.ensemble
        r = ens.range_km
        family = self._family(self._k_grid(num.k_count), with_profiles=True)
        base = self._intensity_of(self._unperturbed(family, r))
        depths = self._trace_depths(options)
        rows = depth_indices(base.z, depths)
        column = int(np.argmin(np.abs(base.tau)))
        axis_row = int(depth_indices(base.z, [self.config.environment.waveguide.z_a])[0])
        mask = finale_mask(base)
        dz = self.grid.h * self._stride()
        slices = {"pe": EnsembleSlices(), "rmt": EnsembleSlices()}
        averages = {"pe": IntensityAccumulator(), "rmt": IntensityAccumulator()}
        for member in range(ens.members):
            for name in ("pe", "rmt"):
                started = time.perf_counter()
                timefront = self._pe_member(family, member, r) if name == "pe" else self._rmt_member(family, member)
                elapsed = time.perf_counter() - started
                intensity = timefront.intensity
                averages[name].push(intensity)
                slices[name].add(intensity, rows, column, axis_row, mask, timefront.energy(dz), elapsed)
            logger.bind(member=member).info("Compared member {} of {}", member + 1, ens.members)

        report = ComparisonReport(range_km=r, members={"pe": ens.members, "rmt": ens.members}, K=len(family.k_grid))
        compare_slices(report, slices["pe"], slices["rmt"], base.z, base.tau, base.z[rows])

        k0 = self.config.source.k0(self._c0)
        basis = self.modes.basis(k0)
        block_spec = replace(ens, n_blocks=1)
        profile = variance_profile(basis, self.modes.coupling(k0), ens.r_b, ens.strength)
        cfg = self._pe_config(k0, self.workers)
        pe_samples = np.stack([extract_unitary(basis, self._env(m), ens.r_b, cfg).U for m in range(ens.members)])
        rmt_samples = np.stack([draw_member(block_spec, m, [profile], [basis])[0].U for m in range(ens.members)])
        compare_variances(report, pe_samples, rmt_samples, profile)
        report.write(session.path("compare.json"))

        meta = {"K": len(family.k_grid)}
        for name, accumulator in averages.items():
            grid = IntensityGrid(accumulator.mean, base.z, base.tau, r, accumulator.count, stderr=accumulator.standard_error)
            self._write_intensity(session, f"average_{name}", grid, options, meta)
        self._write_intensity(session, "unperturbed", base, options, meta)
        manifest.parameters.update({"K": len(family.k_grid), "members": ens.members, "M_k0": basis.M})
