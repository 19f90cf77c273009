"""Shared domain types, unit conventions and input validation for every NOON engine."""

from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Type, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    ValidationError,
    ValidationInfo,
    field_validator,
    model_validator,
)

from src.noon_errors import ConfigError

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact
MIN_BANDWIDTH_RATIO = 10.0
DEFAULT_MAX_PHOTONS = 6
PROBABILITY_SLACK = 1e-12

DelayUnit = Literal["path_m", "phase_rad"]
ScanMode = Literal["coarse", "fine"]


def check_efficiency(value: float) -> float:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"efficiency out of range: {value} not in [0, 1]")
    return value


def check_dark_count(value: float) -> float:
    if not 0.0 <= value < 1.0:
        raise ValueError(f"dark-count probability out of range: {value} not in [0, 1)")
    return value


class SourceSpec(BaseModel):
    """Pulsed SPDC source: carrier, bandwidth, pair rate."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    omega0: float = Field(gt=0, allow_inf_nan=False, description="Central angular frequency (rad/s)")
    delta_omega: float = Field(gt=0, allow_inf_nan=False, description="Spectral width (rad/s)")
    mu: float = Field(ge=0, allow_inf_nan=False, description="Mean photon pairs per pulse")
    rep_rate: float = Field(gt=0, allow_inf_nan=False, description="Pulses per second")

    @model_validator(mode="after")
    def _check_narrowband(self) -> "SourceSpec":
        ratio = self.omega0 / self.delta_omega
        if ratio <= MIN_BANDWIDTH_RATIO:
            raise ValueError(
                f"narrowband assumption violated: omega0/delta_omega = {ratio:.3g} must exceed {MIN_BANDWIDTH_RATIO:g}"
            )
        return self


class DetectionScheme(BaseModel):
    """m detectors behind output channel 1, n behind channel 2.

    The photon-number cap defaults to six; pass ``context={"max_photons": k}``
    to ``model_validate`` to lift it.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    m: int = Field(ge=0)
    n: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_photon_number(self, info: ValidationInfo) -> "DetectionScheme":
        limit = DEFAULT_MAX_PHOTONS
        if info.context and "max_photons" in info.context:
            limit = int(info.context["max_photons"])
        total = self.m + self.n
        if total < 1:
            raise ValueError("scheme needs at least one detector")
        if total > limit:
            raise ValueError(f"photon number {total} exceeds configured maximum {limit}")
        if total >= 2 and total % 2:
            raise ValueError(f"odd photon number {total} unsupported for SPDC post-selection")
        return self

    @classmethod
    def parse(cls, text: str, max_photons: int = DEFAULT_MAX_PHOTONS) -> "DetectionScheme":
        """Parse the ``m/n`` notation used on the command line and in scan headers."""
        parts = str(text).strip().split("/")
        if len(parts) != 2 or not all(p.strip().isdigit() for p in parts):
            raise ConfigError("invalid scheme", [f"expected m/n, got {text!r}"])
        return checked(cls, {"m": int(parts[0]), "n": int(parts[1])}, {"max_photons": max_photons})

    @property
    def total(self) -> int:
        return self.m + self.n

    @property
    def pairs(self) -> int:
        """Photon pairs a post-selected event needs; the single-photon scheme uses one."""
        return max(1, self.total // 2)

    @property
    def label(self) -> str:
        return f"{self.m}/{self.n}"

    def as_tuple(self) -> Tuple[int, int]:
        return (self.m, self.n)

    def mirrored(self) -> "DetectionScheme":
        return DetectionScheme.model_construct(m=self.n, n=self.m)


class ScanConfig(BaseModel):
    """Delay sweep plus the detector figures used when sampling it.

    Coarse grids are motor positions in meters; ``path_multiplier`` turns them
    into optical path (1 for a single pass, 2 for a double-pass arm). Fine grids
    are phases ``phi = omega0 * tau`` in radians.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: ScanMode
    start: float = Field(allow_inf_nan=False)
    step: float = Field(gt=0, allow_inf_nan=False)
    count: int = Field(ge=2)
    eta: float = Field(default=0.2, allow_inf_nan=False)
    dc: float = Field(default=1e-4, allow_inf_nan=False)
    integration_time: float = Field(default=1.0, gt=0, allow_inf_nan=False)
    path_multiplier: float = Field(default=1.0, gt=0, allow_inf_nan=False)

    @field_validator("eta")
    @classmethod
    def _check_eta(cls, value: float) -> float:
        return check_efficiency(value)

    @field_validator("dc")
    @classmethod
    def _check_dc(cls, value: float) -> float:
        return check_dark_count(value)

    @property
    def delay_unit(self) -> DelayUnit:
        return "path_m" if self.mode == "coarse" else "phase_rad"

    def grid(self) -> np.ndarray:
        """Raw grid values: motor positions (coarse) or phases (fine)."""
        return self.start + self.step * np.arange(self.count, dtype=float)

    def delays(self) -> np.ndarray:
        """Scan axis as stored in a PatternScan: optical path (coarse) or phase (fine)."""
        if self.mode == "coarse":
            return self.grid() * self.path_multiplier
        return self.grid()

    def taus(self, spec: SourceSpec) -> np.ndarray:
        """Time delays in seconds; positive means the delayed polarization arm is longer."""
        if self.mode == "coarse":
            return path_to_tau(self.delays())
        return self.grid() / spec.omega0

    def phases(self, spec: SourceSpec) -> np.ndarray:
        return spec.omega0 * self.taus(spec)

    def phase_per_delay(self, spec: SourceSpec) -> float:
        """Radians of interferometer phase per unit of the stored delay axis."""
        return spec.omega0 / SPEED_OF_LIGHT if self.mode == "coarse" else 1.0


class PatternScan(BaseModel):
    """Ordered (delay, probability[, counts]) series for one detection scheme."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    scheme: DetectionScheme
    delays: np.ndarray
    probabilities: np.ndarray
    counts: Optional[np.ndarray] = None
    delay_unit: DelayUnit
    phase_per_delay: Optional[float] = Field(default=None, gt=0)
    engine: str = "ingested"
    reconstructed: bool = False

    @field_validator("delays", "probabilities", mode="before")
    @classmethod
    def _as_float_array(cls, value: Any) -> np.ndarray:
        array = np.array(value, dtype=float).reshape(-1)
        if not np.all(np.isfinite(array)):
            raise ValueError("non-finite values in scan")
        return array

    @field_validator("counts", mode="before")
    @classmethod
    def _as_count_array(cls, value: Any) -> Optional[np.ndarray]:
        if value is None:
            return None
        array = np.array(value).reshape(-1)
        if array.size and (np.any(array < 0) or np.any(array != np.round(array))):
            raise ValueError("counts must be non-negative integers")
        return array.astype(np.int64)

    @model_validator(mode="after")
    def _check_series(self) -> "PatternScan":
        if self.delays.size < 2:
            raise ValueError("a scan needs at least two points")
        if self.delays.shape != self.probabilities.shape:
            raise ValueError("delays and probabilities differ in length")
        if self.counts is not None and self.counts.shape != self.delays.shape:
            raise ValueError("counts and delays differ in length")
        steps = np.diff(self.delays)
        if not (np.all(steps > 0) or np.all(steps < 0)):
            raise ValueError("delay values must be strictly monotonic")
        low, high = self.probabilities.min(), self.probabilities.max()
        if low < -PROBABILITY_SLACK or high > 1.0 + PROBABILITY_SLACK:
            raise ValueError(f"probabilities outside [0, 1]: range [{low:.3g}, {high:.3g}]")
        np.clip(self.probabilities, 0.0, 1.0, out=self.probabilities)
        for array in (self.delays, self.probabilities, self.counts):
            if array is not None:
                array.flags.writeable = False
        return self

    @property
    def points(self) -> List[Tuple[float, float, Optional[int]]]:
        counts = self.counts if self.counts is not None else [None] * len(self.delays)
        return [
            (float(d), float(p), None if c is None else int(c))
            for d, p, c in zip(self.delays, self.probabilities, counts)
        ]

    @property
    def step(self) -> float:
        return float(np.mean(np.abs(np.diff(self.delays))))

    def with_counts(self, counts: np.ndarray) -> "PatternScan":
        return PatternScan(
            scheme=self.scheme,
            delays=self.delays,
            probabilities=self.probabilities,
            counts=counts,
            delay_unit=self.delay_unit,
            phase_per_delay=self.phase_per_delay,
            engine=self.engine,
            reconstructed=self.reconstructed,
        )


class EnvelopeStats(BaseModel):
    """Shape class, envelope widths, coherence length/time and fringe visibility."""

    model_config = ConfigDict(frozen=True)

    shape: Optional[Literal["symmetric", "dip", "bump"]] = None
    upper_fwhm: Optional[float] = None
    lower_fwhm: Optional[float] = None
    coherence_length: Optional[float] = Field(default=None, ge=0)
    coherence_time: Optional[float] = Field(default=None, ge=0)
    visibility: Optional[float] = Field(default=None, ge=0, le=1)
    baseline: Optional[float] = None

    @model_validator(mode="before")
    @classmethod
    def _derive_time(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("coherence_length") is not None and data.get("coherence_time") is None:
            data = dict(data)
            data["coherence_time"] = data["coherence_length"] / SPEED_OF_LIGHT
        return data

    @model_validator(mode="after")
    def _check_time(self) -> "EnvelopeStats":
        if (self.coherence_length is None) != (self.coherence_time is None):
            raise ValueError("coherence length and time must be given together")
        if self.coherence_length is not None and self.coherence_time != self.coherence_length / SPEED_OF_LIGHT:
            raise ValueError("coherence_time must equal coherence_length / c")
        return self


class ValidatedBundle(BaseModel):
    """Source, scheme and scan that passed validation together."""

    model_config = ConfigDict(frozen=True)

    spec: SourceSpec
    scheme: DetectionScheme
    scan: ScanConfig
    max_photons: int = DEFAULT_MAX_PHOTONS


def path_to_tau(path: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Optical path difference (m) to time delay (s)."""
    return path / SPEED_OF_LIGHT


def tau_to_phase(tau: Union[float, np.ndarray], omega0: float) -> Union[float, np.ndarray]:
    return omega0 * tau


def _as_data(value: Any) -> Any:
    return value.model_dump() if isinstance(value, BaseModel) else value


def _error_lines(model: Type[BaseModel], exc: ValidationError) -> List[str]:
    lines = []
    for error in exc.errors():
        location = ".".join(str(part) for part in error["loc"])
        message = error["msg"]
        if message.startswith("Value error, "):
            message = message[len("Value error, "):]
        prefix = f"{model.__name__}.{location}" if location else model.__name__
        lines.append(f"{prefix}: {message}")
    return lines


def checked(model: Type[BaseModel], data: Any, context: Optional[Dict[str, Any]] = None) -> Any:
    """Validate one model, converting pydantic's error into a ConfigError."""
    try:
        return model.model_validate(_as_data(data), context=context)
    except ValidationError as exc:
        raise ConfigError(f"invalid {model.__name__}", _error_lines(model, exc)) from None


def validate(
    spec: Union[SourceSpec, Mapping[str, Any]],
    scheme: Union[DetectionScheme, Mapping[str, Any], str],
    cfg: Union[ScanConfig, Mapping[str, Any]],
    max_photons: int = DEFAULT_MAX_PHOTONS,
) -> ValidatedBundle:
    """Validate raw inputs together, reporting every violated invariant at once.

    Args:
        spec: Source parameters (model or mapping).
        scheme: Detection scheme (model, mapping or ``"m/n"`` text).
        cfg: Scan configuration (model or mapping).
        max_photons: Upper bound on m + n accepted for this run.

    Returns:
        ValidatedBundle. Validating a bundle's own parts again returns an equal bundle.

    Raises:
        ConfigError: listing all violations across the three inputs.
    """
    if isinstance(scheme, str):
        parts = scheme.split("/")
        scheme = {"m": parts[0], "n": parts[1] if len(parts) > 1 else None}
    problems: List[str] = []
    results: Dict[str, Any] = {}
    for name, model, data, context in (
        ("spec", SourceSpec, spec, None),
        ("scheme", DetectionScheme, scheme, {"max_photons": max_photons}),
        ("scan", ScanConfig, cfg, None),
    ):
        try:
            results[name] = model.model_validate(_as_data(data), context=context)
        except ValidationError as exc:
            problems.extend(_error_lines(model, exc))
    if problems:
        raise ConfigError("invalid inputs", problems)
    return ValidatedBundle(max_photons=max_photons, **results)

