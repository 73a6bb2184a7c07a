"""Shared toy-scale fixtures: coarse depth grid, 20 Hz source, reduced internal-wave spectrum."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from tfrmt.config import (
    EnsembleSpec,
    EnvironmentConfig,
    ExperimentConfig,
    InternalWaveParams,
    NumericsConfig,
    OutputConfig,
    SourceSpec,
    WaveguideParams,
)
from tfrmt.environment import EnvModel, sample_iw_realization
from tfrmt.modes import DepthGrid, ModeCache
from tfrmt.pe import PEConfig


TOY_NZ = 1023


@pytest.fixture
def waveguide() -> WaveguideParams:
    return WaveguideParams()


@pytest.fixture
def internal_waves() -> InternalWaveParams:
    return InternalWaveParams(j_max=6, l_max=64)


@pytest.fixture
def grid(waveguide) -> DepthGrid:
    return DepthGrid.from_waveguide(waveguide, TOY_NZ)


@pytest.fixture
def source() -> SourceSpec:
    return SourceSpec(f0=20.0, sigma_f=4.0, z_src=1.0, w_src=0.15)


@pytest.fixture
def k0(source, waveguide) -> float:
    return source.k0(waveguide.c0)


@pytest.fixture
def cache(waveguide, internal_waves, grid) -> ModeCache:
    return ModeCache(waveguide, internal_waves, grid)


@pytest.fixture
def basis(cache, k0):
    return cache.basis(k0)


@pytest.fixture
def calm(waveguide, internal_waves) -> EnvModel:
    return EnvModel(waveguide, internal_waves)


@pytest.fixture
def perturbed(waveguide, internal_waves) -> EnvModel:
    return EnvModel(waveguide, internal_waves, sample_iw_realization(7, internal_waves))


@pytest.fixture
def pe_config(grid, k0) -> PEConfig:
    return PEConfig(k=k0, grid=grid, unitarity_tol=1e-4)


@pytest.fixture
def toy_config(tmp_path) -> ExperimentConfig:
    config = ExperimentConfig(
        environment=EnvironmentConfig(internal_waves=InternalWaveParams(j_max=6, l_max=64)),
        source=SourceSpec(f0=20.0, sigma_f=4.0, z_src=1.0, w_src=0.15),
        numerics=NumericsConfig(
            nz=TOY_NZ, k_count=16, k_count_rmt=16, unitarity_tol=1e-4, depth_stride=4
        ),
        ensemble=EnsembleSpec(master_seed=11, members=3, r_b=10.0, n_blocks=1),
        outputs=OutputConfig(directory=str(tmp_path / "runs")),
    )
    config.validate()
    return config


@pytest.fixture
def toy_config_path(toy_config, tmp_path) -> Path:
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(toy_config.to_dict()), encoding="utf-8")
    return path


def banded_s(M: int, scale: float = 1e-2, decay: float = 1.0) -> np.ndarray:
    """Synthetic symmetric element deviations decaying away from the diagonal."""
    offsets = np.abs(np.subtract.outer(np.arange(M), np.arange(M)))
    return scale * np.exp(-decay * offsets)
