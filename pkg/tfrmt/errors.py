"""Exception types raised by TimefrontRMT."""

from __future__ import annotations


class TfrmtError(Exception):
    """Base class for failures the CLI reports as a runtime error."""


class ConfigError(TfrmtError, ValueError):
    """Invalid configuration value; ``field`` is the dotted config path."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}")


class ModeCountError(TfrmtError):
    """More modes were requested than the waveguide traps at this wavenumber."""

    def __init__(self, requested: int, trapped: int, k: float) -> None:
        self.requested = requested
        self.trapped = trapped
        self.k = k
        super().__init__(
            f"requested {requested} modes but only {trapped} are trapped at k={k:.4f} rad/km"
        )


class GridMismatchError(TfrmtError, ValueError):
    """Arrays or objects defined on incompatible grids were combined."""


class UnitarityError(TfrmtError):
    """An extracted propagator is further from unitary than the tolerance allows."""

    def __init__(self, defect: float, tol: float) -> None:
        self.defect = defect
        self.tol = tol
        super().__init__(f"unitarity defect {defect:.3e} exceeds tolerance {tol:.1e}")


class KWindowError(TfrmtError, ValueError):
    """The wavenumber grid clips the source spectrum or is not uniform."""


class GridFileError(TfrmtError):
    """A grid file is malformed or has an unexpected layout."""
