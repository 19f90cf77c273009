"""Exception hierarchy shared by the engines, the analysis code and the harness."""

from typing import Iterable, List, Optional


class NoonError(Exception):
    """Base error; carries the individual violations that produced it."""

    exit_code = 1

    def __init__(self, message: str, details: Optional[Iterable[str]] = None):
        self.details: List[str] = list(details or [])
        text = message if not self.details else f"{message}: " + "; ".join(self.details)
        super().__init__(text)


class ConfigError(NoonError, ValueError):
    """Raised when inputs or configuration files violate the documented schema."""

    exit_code = 2


class UnsupportedSchemeError(NoonError, ValueError):
    """Raised when a detection scheme lies outside an engine's supported range."""

    exit_code = 2


class NumericalInvariantError(NoonError, ArithmeticError):
    """Raised when a unitarity, norm, symplectic, determinant or fit check fails."""

    exit_code = 3


class AnalysisError(NoonError, ValueError):
    """Raised when a scan cannot support the requested pattern metric."""

    exit_code = 3


class InsufficientSamplingError(AnalysisError):
    """Raised when the fringe sampling density is below what envelope extraction needs."""


class DegenerateScanError(AnalysisError):
    """Raised for flat scans that carry no fringe or envelope information."""


class ScanFormatError(NoonError):
    """Raised for unreadable scan CSV files; details carry line numbers."""

    exit_code = 4
