"""Intensity level helpers: decibel conversion and ensemble accumulation."""

from __future__ import annotations

from typing import Optional

import numpy as np


def to_db(values: np.ndarray, reference: Optional[float] = None, floor_db: float = -200.0) -> np.ndarray:
    """Return 10*log10(values / reference), clipped at ``floor_db``.

    The reference defaults to the peak value so the maximum maps to 0 dB.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return values.copy()
    ref = float(np.max(values)) if reference is None else float(reference)
    if ref <= 0.0:
        return np.full(values.shape, floor_db)
    floor = ref * 10.0 ** (floor_db / 10.0)
    return 10.0 * np.log10(np.maximum(values, floor) / ref)


class IntensityAccumulator:
    """Running mean and variance of equally shaped intensity arrays.

    Uses Welford's update, which stays accurate when the spread is small next
    to the mean. Samples are folded in push order, so a fixed member order
    gives bit-identical results.
    """

    def __init__(self) -> None:
        self._mean: Optional[np.ndarray] = None
        self._m2: Optional[np.ndarray] = None
        self._count = 0

    def push(self, values: np.ndarray) -> np.ndarray:
        """Add a new sample and return the current mean."""
        values = np.asarray(values, dtype=np.float64)
        if self._mean is None:
            self._mean = np.zeros_like(values)
            self._m2 = np.zeros_like(values)
        elif values.shape != self._mean.shape:
            raise ValueError(f"sample shape {values.shape} does not match {self._mean.shape}")
        self._count += 1
        delta = values - self._mean
        self._mean += delta / self._count
        self._m2 += delta * (values - self._mean)
        return self.mean

    @property
    def count(self) -> int:
        return self._count

    @property
    def mean(self) -> np.ndarray:
        if self._mean is None:
            raise ValueError("no samples accumulated")
        return self._mean.copy()

    @property
    def variance(self) -> np.ndarray:
        """Unbiased sample variance (zeros for a single sample)."""
        mean = self.mean
        if self._count < 2:
            return np.zeros_like(mean)
        return np.maximum(self._m2 / (self._count - 1), 0.0)

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self._count)
