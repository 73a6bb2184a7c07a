"""Configuration management for TimefrontRMT experiments."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
import hashlib
import json
import math
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from tfrmt.errors import ConfigError
from tfrmt.models import COHERENCE_CHOICES, OUTPUT_FORMATS


CONFIG_VERSION = 1
WORKERS_ENV = "TFRMT_WORKERS"


def _coerce(value: Any, default: Any, path: str) -> Any:
    """Convert a raw JSON value to the type of the field default."""
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError("expected true/false")
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer")
            return int(value)
        if isinstance(default, float):
            if isinstance(value, bool):
                raise TypeError("expected a number")
            number = float(value)
            if not math.isfinite(number):
                raise ValueError("expected a finite number")
            return number
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError("expected a string")
            return value
        if isinstance(default, list):
            if not isinstance(value, list):
                raise TypeError("expected a list")
            return list(value)
        if default is None:
            # Optional[int] fields (mode counts) default to None.
            if value is None:
                return None
            if isinstance(value, bool) or float(value) != int(value):
                raise TypeError("expected an integer or null")
            return int(value)
    except (TypeError, ValueError, OverflowError) as exc:
        raise ConfigError(path, f"{exc} (got {value!r})") from None
    return value


def _from_section(cls, data: Any, path: str):
    """Instantiate a config dataclass from a mapping, ignoring unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(path, "expected an object")
    template = cls()
    kwargs: Dict[str, Any] = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        default = getattr(template, f.name)
        sub_path = f"{path}.{f.name}" if path else f.name
        if is_dataclass(default):
            kwargs[f.name] = _from_section(type(default), data[f.name], sub_path)
        else:
            kwargs[f.name] = _coerce(data[f.name], default, sub_path)
    return cls(**kwargs)


def _require(condition: bool, path: str, message: str) -> None:
    if not condition:
        raise ConfigError(path, message)


@dataclass
class WaveguideParams:
    """Munk canonical waveguide. Depths in km, positive downward."""

    c0: float = 1.49
    z_a: float = 1.0
    B: float = 1.0
    gamma: float = 0.0114
    H: float = 5.0
    z_min: float = -3.0
    z_max: float = 10.0

    def validate(self, path: str = "environment.waveguide") -> None:
        _require(self.c0 > 0, f"{path}.c0", "must be > 0")
        _require(self.B > 0, f"{path}.B", "must be > 0")
        _require(self.gamma > 0, f"{path}.gamma", "must be > 0")
        _require(self.z_min < 0, f"{path}.z_min", "must be < 0 (above the surface)")
        _require(0 < self.z_a < self.H, f"{path}.z_a", "must lie between the surface and H")
        _require(self.H <= self.z_max, f"{path}.H", "must not exceed z_max")


@dataclass
class InternalWaveParams:
    """Garrett-Munk internal-wave field parameters (SI frequencies, rad/km wavenumbers)."""

    E_gm: float = 6.3e-5
    N0: float = 2.0 * math.pi / 600.0
    f_i: float = 2.0 * math.pi / 86400.0
    j_star: float = 3.0
    j_max: int = 30
    g: float = 9.81
    kl_min: float = 2.0 * math.pi * 0.01
    kl_max: float = 2.0 * math.pi * 1.0
    l_max: int = 512

    @property
    def kl_grid(self) -> np.ndarray:
        return np.linspace(self.kl_min, self.kl_max, self.l_max)

    @property
    def dkl(self) -> float:
        return (self.kl_max - self.kl_min) / (self.l_max - 1)

    def validate(self, path: str = "environment.internal_waves") -> None:
        for name in ("E_gm", "N0", "f_i", "j_star", "g", "kl_min"):
            _require(getattr(self, name) > 0, f"{path}.{name}", "must be > 0")
        _require(self.j_max >= 1, f"{path}.j_max", "must be >= 1")
        _require(self.l_max >= 2, f"{path}.l_max", "must be >= 2")
        _require(self.kl_max > self.kl_min, f"{path}.kl_max", "must exceed kl_min")


@dataclass
class EnvironmentConfig:
    waveguide: WaveguideParams = field(default_factory=WaveguideParams)
    internal_waves: InternalWaveParams = field(default_factory=InternalWaveParams)


@dataclass
class SourceSpec:
    """Broadband Gaussian source: spectrum in Hz, depth profile in km."""

    f0: float = 75.0
    sigma_f: float = 18.75
    z_src: float = 1.0
    w_src: float = 0.1

    def k0(self, c0: float) -> float:
        return 2.0 * math.pi * self.f0 / c0

    def sigma_k(self, c0: float) -> float:
        return 2.0 * math.pi * self.sigma_f / c0

    def validate(self, path: str = "source") -> None:
        _require(self.sigma_f > 0, f"{path}.sigma_f", "must be > 0")
        _require(self.f0 > 3.0 * self.sigma_f, f"{path}.f0", "must exceed 3 * sigma_f")
        _require(self.w_src > 0, f"{path}.w_src", "must be > 0")


@dataclass
class NumericsConfig:
    """Discretisation knobs shared by the mode solver, PE and synthesis."""

    nz: int = 8192
    dr: float = 0.025
    sponge_width: float = 1.5
    sponge_strength: float = 0.01
    k_count: int = 128
    k_count_rmt: int = 512
    k_sigmas: float = 4.0
    k_clip_tol: float = 4e-4
    mode_count: Optional[int] = None
    guard_modes: int = 10
    unitarity_tol: float = 1e-6
    leak_warn_fraction: float = 0.01
    depth_stride: int = 8

    def validate(self, path: str = "numerics") -> None:
        _require(self.nz >= 64, f"{path}.nz", "must be >= 64")
        _require(self.dr > 0, f"{path}.dr", "must be > 0")
        _require(self.sponge_width > 0, f"{path}.sponge_width", "must be > 0")
        _require(self.sponge_strength >= 0, f"{path}.sponge_strength", "must be >= 0")
        _require(self.k_count >= 2, f"{path}.k_count", "must be >= 2")
        _require(self.k_count_rmt >= 2, f"{path}.k_count_rmt", "must be >= 2")
        _require(self.k_sigmas > 0, f"{path}.k_sigmas", "must be > 0")
        _require(
            self.mode_count is None or self.mode_count >= 1,
            f"{path}.mode_count",
            "must be null or >= 1",
        )
        _require(self.guard_modes >= 0, f"{path}.guard_modes", "must be >= 0")
        _require(self.unitarity_tol > 0, f"{path}.unitarity_tol", "must be > 0")
        _require(self.depth_stride >= 1, f"{path}.depth_stride", "must be >= 1")


@dataclass
class EnsembleSpec:
    """Random-matrix ensemble and internal-wave ensemble sizing."""

    master_seed: int = 0
    members: int = 100
    r_b: float = 50.0
    n_blocks: int = 1
    coherence: str = "k-coherent"
    strength: float = 1.0

    @property
    def range_km(self) -> float:
        return self.n_blocks * self.r_b

    def validate(self, path: str = "ensemble") -> None:
        _require(0 <= self.master_seed < 2**64, f"{path}.master_seed", "must be a u64")
        _require(self.members >= 1, f"{path}.members", "must be >= 1")
        _require(self.r_b > 0, f"{path}.r_b", "must be > 0")
        _require(self.n_blocks >= 1, f"{path}.n_blocks", "must be >= 1")
        _require(
            self.coherence in COHERENCE_CHOICES,
            f"{path}.coherence",
            f"must be one of {', '.join(COHERENCE_CHOICES)}",
        )
        _require(self.strength >= 0, f"{path}.strength", "must be >= 0")


@dataclass
class OutputConfig:
    directory: str = "runs"
    formats: List[str] = field(default_factory=lambda: list(OUTPUT_FORMATS))
    trace_depths: List[float] = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    log_level: str = "INFO"

    def validate(self, path: str = "outputs") -> None:
        for fmt in self.formats:
            _require(fmt in OUTPUT_FORMATS, f"{path}.formats", f"unknown format {fmt!r}")
        _require(bool(self.trace_depths), f"{path}.trace_depths", "must not be empty")


@dataclass
class ExperimentConfig:
    """Represents one reproducible experiment."""

    version: int = CONFIG_VERSION
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    source: SourceSpec = field(default_factory=SourceSpec)
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def to_dict(self) -> Dict[str, Any]:
        """Convert config to a JSON serialisable dictionary."""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        """Instantiate from a parsed JSON document and validate it."""
        config = _from_section(cls, data, "")
        if config.version > CONFIG_VERSION:
            raise ConfigError("version", f"schema {config.version} is newer than {CONFIG_VERSION}")
        config.version = CONFIG_VERSION
        config.validate()
        return config

    def validate(self) -> None:
        self.environment.waveguide.validate()
        self.environment.internal_waves.validate()
        self.source.validate()
        self.numerics.validate()
        self.ensemble.validate()
        self.outputs.validate()
        wg = self.environment.waveguide
        inner_top = wg.z_min + self.numerics.sponge_width
        inner_bottom = wg.z_max - self.numerics.sponge_width
        _require(
            inner_top <= -0.5 and inner_bottom >= wg.H + 1.0,
            "numerics.sponge_width",
            "absorber must stay outside [-0.5, H + 1] km",
        )

    def config_hash(self) -> str:
        """Short SHA-256 of the canonical JSON form.

        The output directory and log level do not change results and are left out.
        """
        data = self.to_dict()
        data["outputs"].pop("directory", None)
        data["outputs"].pop("log_level", None)
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def save(self, path: Path) -> None:
        """Persist configuration to disk."""
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    def with_overrides(
        self,
        seed: Optional[int] = None,
        members: Optional[int] = None,
        range_km: Optional[float] = None,
        strength: Optional[float] = None,
        out_dir: Optional[str] = None,
    ) -> "ExperimentConfig":
        """Return a validated copy with CLI overrides applied."""
        ensemble = self.ensemble
        if seed is not None:
            ensemble = replace(ensemble, master_seed=seed)
        if members is not None:
            ensemble = replace(ensemble, members=members)
        if strength is not None:
            ensemble = replace(ensemble, strength=strength)
        if range_km is not None:
            blocks = range_km / ensemble.r_b
            if blocks < 1 or abs(blocks - round(blocks)) > 1e-9:
                raise ConfigError(
                    "ensemble.n_blocks",
                    f"range {range_km} km is not a whole multiple of r_b={ensemble.r_b} km",
                )
            ensemble = replace(ensemble, n_blocks=int(round(blocks)))
        outputs = self.outputs
        if out_dir is not None:
            outputs = replace(outputs, directory=out_dir)
        updated = replace(self, ensemble=ensemble, outputs=outputs)
        updated.validate()
        return updated


def load_config(path: Optional[Path] = None) -> ExperimentConfig:
    """Load and validate an experiment config; defaults when no path is given."""
    if path is None:
        config = ExperimentConfig()
        config.validate()
        return config
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON in {path}: {exc}") from None
    return ExperimentConfig.from_dict(raw)


def resolve_workers(requested: Optional[int] = None) -> int:
    """Worker count from the flag, then TFRMT_WORKERS (with .env loading), then CPUs."""
    if requested is not None:
        if requested < 1:
            raise ConfigError("workers", "must be >= 1")
        return requested
    load_dotenv()
    raw = os.environ.get(WORKERS_ENV)
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(WORKERS_ENV, f"not an integer: {raw!r}") from None
        if value < 1:
            raise ConfigError(WORKERS_ENV, "must be >= 1")
        return value
    return os.cpu_count() or 1
