"""Command metadata and constants for TimefrontRMT."""

from __future__ import annotations

from enum import Enum
from typing import List, Tuple


class Provenance(str, Enum):
    """Where a propagator or timefront came from."""

    PE = "PE"
    RMT = "RMT"
    UNPERTURBED = "UNPERTURBED"


COMMAND_CHOICES: List[Tuple[str, str]] = [
    ("modes", "Solve waveguide modes at one wavenumber"),
    ("iw-field", "Realize an internal-wave field and sample it in depth and range"),
    ("pe-unitary", "Extract mode propagation matrices with the parabolic equation"),
    ("rmt-ensemble", "Build variance profiles and sample random-matrix propagators"),
    ("timefront", "Synthesize a single broadband timefront"),
    ("average", "Ensemble-average timefront intensity"),
    ("mixing-front", "Evaluate the analytic mixing front and its Monte-Carlo check"),
    ("compare", "Statistically compare PE and random-matrix ensembles"),
]

METHOD_CHOICES: List[str] = ["rmt", "pe"]

COHERENCE_CHOICES: List[str] = ["k-coherent", "white-noise"]

OUTPUT_FORMATS: List[str] = ["grid", "db", "csv"]
