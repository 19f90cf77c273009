"""Envelope, shape, width and visibility metrics for simulated or ingested NOON scans.

Envelopes come from harmonic fits in sliding windows when the phase per unit
delay is known, and from per-window extrema otherwise. A window is long enough
once the sampled fringe phases of every expected harmonic leave no gap wider
than a set fraction of a cycle, so coarse scans that undersample the optical
fringe still work: the motor step walks the fringe phase stroboscopically.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.interpolate import PchipInterpolator
from scipy.optimize import minimize_scalar

from src.noon_errors import AnalysisError, DegenerateScanError, InsufficientSamplingError
from src.noon_types import SPEED_OF_LIGHT, EnvelopeStats, PatternScan, SourceSpec

logger = logging.getLogger(__name__)

ACCURACY_GAP = 1.0 / 32
MINIMUM_GAP = 1.0 / 8
MIN_PERIODS = 5
DEFAULT_TOLERANCE = 0.15
DEFAULT_BASELINE_FRACTION = 0.1
DEGENERATE_SCALE = 1e-12
HARMONIC_THRESHOLD = 0.01
PEAK_FRACTION = 0.1
PERIODIC_TOLERANCE = 1e-9
FIT_HOP_DIVISOR = 4
FIT_CONDITION = 1e8
FIT_CHUNK = 1024
EXTREMA_GRID = 1024
UNIFORM_TOLERANCE = 1e-6


@dataclass(frozen=True, eq=False)
class Envelopes:
    """Upper/lower envelopes sampled at every (ascending) scan delay."""

    delays: np.ndarray
    values: np.ndarray
    upper: np.ndarray
    lower: np.ndarray
    baseline: float
    window: int

    @property
    def excursions(self) -> Tuple[float, float]:
        """(U, L): peak of the upper envelope above baseline, trough of the lower below it."""
        return float(np.max(self.upper) - self.baseline), float(self.baseline - np.min(self.lower))


@dataclass(frozen=True)
class HarmonicContent:
    dominant: int
    present: Tuple[int, ...]
    amplitudes: Dict[int, float]


def _ascending(scan: PatternScan) -> Tuple[np.ndarray, np.ndarray]:
    delays = np.asarray(scan.delays, dtype=float)
    values = np.asarray(scan.probabilities, dtype=float)
    if delays[0] > delays[-1]:
        return delays[::-1].copy(), values[::-1].copy()
    return delays, values


def baseline(values: np.ndarray, fraction: float = DEFAULT_BASELINE_FRACTION) -> float:
    """Mean of the outermost ``fraction`` of points, half from each end."""
    edge = max(1, int(round(len(values) * fraction / 2)))
    return float(np.mean(np.concatenate([values[:edge], values[-edge:]])))


def _scale(values: np.ndarray) -> float:
    return max(float(np.max(np.abs(values))), np.finfo(float).tiny)


def _detected_frequencies(values: np.ndarray) -> List[float]:
    """Fringe frequencies (cycles per sample) picked from the discrete spectrum."""
    n = len(values)
    magnitude = np.abs(np.fft.rfft(values - np.mean(values)))
    first = MIN_PERIODS
    if len(magnitude) <= first + 1:
        raise InsufficientSamplingError(f"{n} points cannot hold {MIN_PERIODS} fringe periods")
    band = magnitude[first:]
    peak = float(np.max(band))
    if peak <= DEGENERATE_SCALE * _scale(values) * n:
        raise DegenerateScanError("flat scan: no fringe in the spectrum")
    frequencies = []
    for j in range(len(band)):
        left = band[j - 1] if j > 0 else -np.inf
        right = band[j + 1] if j + 1 < len(band) else -np.inf
        if band[j] >= PEAK_FRACTION * peak and band[j] >= left and band[j] >= right:
            frequencies.append((j + first) / n)
    return frequencies


def fringe_orders(total: int) -> List[int]:
    """Harmonics of the one-photon phase an m+n photon fringe can carry."""
    return [1] if total == 1 else list(range(2, total + 1, 2))


def expected_frequencies(scan: PatternScan) -> List[float]:
    """Folded fringe frequencies (cycles per sample) of every harmonic the scheme can show."""
    if scan.phase_per_delay is None:
        _, values = _ascending(scan)
        return _detected_frequencies(values)
    base = scan.phase_per_delay * scan.step / (2.0 * math.pi)
    folded = []
    for k in fringe_orders(scan.scheme.total):
        f = (k * base) % 1.0
        folded.append(min(f, 1.0 - f))
    return folded


def _max_gap(frequency: float, window: int) -> float:
    phases = np.sort(np.mod(np.arange(window) * frequency, 1.0))
    gaps = np.diff(phases)
    wrap = 1.0 - phases[-1] + phases[0]
    return float(max(np.max(gaps) if gaps.size else 0.0, wrap))


def _covers(frequencies: Sequence[float], window: int, gap: float) -> bool:
    return all(_max_gap(f, window) <= gap for f in frequencies)


def _smallest_window(frequencies: Sequence[float], gap: float, limit: int) -> Optional[int]:
    if limit < 2 or not _covers(frequencies, limit, gap):
        return None
    low, high = 2, limit
    while low < high:
        middle = (low + high) // 2
        if _covers(frequencies, middle, gap):
            high = middle
        else:
            low = middle + 1
    return low


def _insufficient(frequencies: Sequence[float], count: int) -> InsufficientSamplingError:
    limit = count // MIN_PERIODS
    return InsufficientSamplingError(
        "insufficient sampling density for envelope extraction",
        [
            f"need fringe phases within {MINIMUM_GAP:.3f} cycle inside {limit} points "
            f"({MIN_PERIODS} windows over {count} points); folded frequencies {[round(f, 4) for f in frequencies]}"
        ],
    )


def window_length(frequencies: Sequence[float], count: int) -> int:
    """Shortest extrema window that samples every harmonic's full cycle.

    Raises:
        InsufficientSamplingError: when even ``MINIMUM_GAP`` coverage needs more
            than ``count / MIN_PERIODS`` points.
    """
    limit = count // MIN_PERIODS
    window = _smallest_window(frequencies, ACCURACY_GAP, limit)
    if window is not None:
        return window
    window = _smallest_window(frequencies, MINIMUM_GAP, limit)
    if window is not None:
        logger.warning(f"Envelope accuracy reduced: fringe phase coverage only within 1/8 cycle ({window}-point window)")
        return window
    raise _insufficient(frequencies, count)


def fit_window(frequencies: Sequence[float], count: int, parameters: int) -> int:
    """Shortest window for a harmonic fit: every harmonic seen within ``MINIMUM_GAP`` of a cycle."""
    window = _smallest_window(frequencies, MINIMUM_GAP, count // MIN_PERIODS)
    if window is None:
        raise _insufficient(frequencies, count)
    return min(max(window, 2 * parameters), count)


def window_blocks(count: int, window: int) -> List[Tuple[int, int]]:
    """Consecutive (start, stop) blocks; a tail shorter than half a window joins the block before it."""
    blocks = [(start, min(start + window, count)) for start in range(0, count, window)]
    if len(blocks) > 1 and blocks[-1][1] - blocks[-1][0] < max(2, window // 2):
        blocks[-2:] = [(blocks[-2][0], count)]
    return blocks


def _harmonic_design(phases: np.ndarray, orders: Sequence[int]) -> np.ndarray:
    columns = [np.ones_like(phases)]
    for k in orders:
        columns += [np.cos(k * phases), np.sin(k * phases)]
    return np.column_stack(columns)


def _fit_starts(count: int, window: int) -> np.ndarray:
    starts = list(range(0, count - window + 1, max(1, window // FIT_HOP_DIVISOR)))
    if starts[-1] != count - window:
        starts.append(count - window)
    return np.asarray(starts)


def _window_coefficients(phases: np.ndarray, values: np.ndarray, orders: Sequence[int], window: int, starts: np.ndarray) -> np.ndarray:
    """Least-squares c0 + sum_k (a_k cos k phi + b_k sin k phi) in every window, one row per start."""
    steps = np.diff(phases)
    step = float(np.mean(steps))
    if np.max(np.abs(steps - step)) <= UNIFORM_TOLERANCE * abs(step):
        # uniform phase steps: one solver serves every window, phases counted from the window start
        design = _harmonic_design(np.arange(window) * step, orders)
        condition = np.linalg.cond(design)
        if not condition < FIT_CONDITION:
            raise InsufficientSamplingError(
                "fringe harmonics alias onto each other at this step",
                [f"harmonics {list(orders)} over {window} points: condition number {condition:.2e}"],
            )
        return sliding_window_view(values, window)[starts] @ np.linalg.pinv(design).T
    return np.array(
        [
            np.linalg.lstsq(_harmonic_design(phases[s:s + window], orders), values[s:s + window], rcond=None)[0]
            for s in starts
        ]
    )


def _harmonic_extremes(coefficients: np.ndarray, orders: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """(max, min) over phi of each fitted fringe."""
    c0 = coefficients[:, 0]
    if len(orders) == 1:
        amplitude = np.hypot(coefficients[:, 1], coefficients[:, 2])
        return c0 + amplitude, c0 - amplitude
    period = 2.0 * math.pi / math.gcd(*orders)
    basis = _harmonic_design(np.linspace(0.0, period, EXTREMA_GRID, endpoint=False), orders).T
    top, bottom = np.empty(len(coefficients)), np.empty(len(coefficients))
    for start in range(0, len(coefficients), FIT_CHUNK):
        curves = coefficients[start:start + FIT_CHUNK] @ basis
        top[start:start + FIT_CHUNK] = curves.max(axis=1)
        bottom[start:start + FIT_CHUNK] = curves.min(axis=1)
    return top, bottom


def envelopes(scan: PatternScan, baseline_fraction: float = DEFAULT_BASELINE_FRACTION) -> Envelopes:
    """Upper and lower envelopes, interpolated with monotone (PCHIP) curves.

    With a known phase scale every sliding window is demodulated: a fit over the
    scheme's harmonics gives the fringe maximum and minimum at the window centre.
    Without one, block extrema serve as knots.
    """
    delays, values = _ascending(scan)
    frequencies = expected_frequencies(scan)
    if scan.phase_per_delay is not None:
        orders = fringe_orders(scan.scheme.total)
        window = fit_window(frequencies, len(values), 1 + 2 * len(orders))
        starts = _fit_starts(len(values), window)
        sums = np.concatenate([[0.0], np.cumsum(delays)])
        centres = (sums[starts + window] - sums[starts]) / window
        coefficients = _window_coefficients(delays * scan.phase_per_delay, values, orders, window, starts)
        top, bottom = _harmonic_extremes(coefficients, orders)
        upper = _interpolate(delays, centres, top)
        lower = _interpolate(delays, centres, bottom)
    else:
        window = window_length(frequencies, len(values))
        maxima, minima = [], []
        for start, stop in window_blocks(len(values), window):
            block = values[start:stop]
            maxima.append(start + int(np.argmax(block)))
            minima.append(start + int(np.argmin(block)))
        upper = _interpolate(delays, delays[maxima], values[maxima])
        lower = _interpolate(delays, delays[minima], values[minima])
    logger.debug(f"Envelope window {window} points for {scan.scheme.label} ({len(values)} points)")
    return Envelopes(delays, values, upper, lower, baseline(values, baseline_fraction), window)


def _interpolate(delays: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if len(x) < 2:
        return np.full_like(delays, y[0])
    curve = PchipInterpolator(x, y, extrapolate=False)
    return curve(np.clip(delays, x[0], x[-1]))


def classify_envelopes(env: Envelopes, tolerance: float = DEFAULT_TOLERANCE) -> str:
    upper, lower = env.excursions
    largest = max(upper, lower)
    if largest <= DEGENERATE_SCALE * _scale(env.values):
        raise DegenerateScanError("flat scan: envelopes do not leave the baseline")
    if abs(upper - lower) <= tolerance * largest:
        return "symmetric"
    return "bump" if upper > lower else "dip"


def classify(
    scan: PatternScan,
    tolerance: float = DEFAULT_TOLERANCE,
    baseline_fraction: float = DEFAULT_BASELINE_FRACTION,
) -> str:
    """``symmetric``, ``bump`` or ``dip`` from the envelope excursions around the baseline."""
    return classify_envelopes(envelopes(scan, baseline_fraction), tolerance)


def fwhm(delays: np.ndarray, excursion: np.ndarray) -> float:
    """Full width at half maximum of a single-peaked excursion, with linear crossings."""
    peak = int(np.argmax(excursion))
    half = excursion[peak] / 2.0
    if not half > 0:
        raise AnalysisError("envelope has no positive excursion")
    below_left = np.nonzero(excursion[:peak] < half)[0]
    below_right = np.nonzero(excursion[peak:] < half)[0]
    if below_left.size == 0 or below_right.size == 0:
        raise AnalysisError("envelope does not fall to half maximum inside the scan")
    i = int(below_left[-1])
    j = peak + int(below_right[0])
    left = _crossing(delays[i], delays[i + 1], excursion[i], excursion[i + 1], half)
    right = _crossing(delays[j - 1], delays[j], excursion[j - 1], excursion[j], half)
    return float(right - left)


def _crossing(x0: float, x1: float, y0: float, y1: float, level: float) -> float:
    return x0 + (level - y0) * (x1 - x0) / (y1 - y0)


def _periodic_cycles(scan: PatternScan) -> Optional[int]:
    """Number of full 2*pi periods spanned by an endpoint-free fine scan, if integral."""
    if scan.delay_unit != "phase_rad":
        return None
    cycles = len(scan.delays) * scan.step / (2.0 * math.pi)
    rounded = int(round(cycles))
    steps = np.abs(np.diff(scan.delays))
    uniform = np.max(np.abs(steps - scan.step)) <= PERIODIC_TOLERANCE * scan.step
    if rounded >= 1 and abs(cycles - rounded) <= PERIODIC_TOLERANCE * cycles and uniform:
        return rounded
    return None


def harmonic_content(scan: PatternScan, threshold: float = HARMONIC_THRESHOLD) -> HarmonicContent:
    """Fringe harmonics (multiples of the one-photon phase frequency) of a periodic fine scan.

    Ties for the dominant harmonic go to the lower order.
    """
    cycles = _periodic_cycles(scan)
    if cycles is None:
        raise AnalysisError("harmonic content needs a uniform fine scan spanning whole 2*pi periods")
    _, values = _ascending(scan)
    n = len(values)
    spectrum = np.fft.rfft(values - np.mean(values))
    amplitudes = {}
    k = 1
    while k * cycles < (n + 1) // 2:
        amplitudes[k] = 2.0 * abs(spectrum[k * cycles]) / n
        k += 1
    largest = max(amplitudes.values()) if amplitudes else 0.0
    if largest <= DEGENERATE_SCALE * _scale(values):
        raise DegenerateScanError("flat scan: no fringe harmonics")
    present = tuple(k for k, a in amplitudes.items() if a >= threshold * largest)
    dominant = next(k for k, a in amplitudes.items() if a >= largest * (1.0 - 1e-9))
    return HarmonicContent(dominant=dominant, present=present, amplitudes=amplitudes)


def _band_limited(scan: PatternScan, cycles: int):
    """Trigonometric series through a periodic fine scan, keeping harmonics up to 2N."""
    delays, values = _ascending(scan)
    n = len(values)
    spectrum = np.fft.rfft(values)
    limit = min(max(2 * scan.scheme.total, 8) * cycles, len(spectrum) - 1)
    if 2 * limit >= n:
        limit = (n - 1) // 2
    coefficients = spectrum[: limit + 1] / n
    origin = delays[0]
    omega = 2.0 * math.pi / (n * scan.step)

    def series(x):
        x = np.asarray(x, dtype=float)
        bins = np.arange(limit + 1)
        phase = np.multiply.outer(x - origin, bins * omega)
        terms = coefficients * np.exp(1j * phase)
        return (terms[..., 0] + 2.0 * np.sum(terms[..., 1:], axis=-1)).real

    return series, delays


def _polished_minimum(function, centre: float, radius: float) -> float:
    best = minimize_scalar(function, bounds=(centre - radius, centre + radius), method="bounded", options={"xatol": 1e-13})
    return float(best.fun)


def _refined_extremes(scan: PatternScan) -> Tuple[float, float]:
    """(min, max) of the fringe, refined between samples."""
    cycles = _periodic_cycles(scan)
    if cycles is not None:
        series, delays = _band_limited(scan, cycles)
        dense = np.linspace(delays[0], delays[0] + len(delays) * scan.step, 64 * len(delays), endpoint=False)
        samples = series(dense)
        radius = dense[1] - dense[0]
        top, bottom = int(np.argmax(samples)), int(np.argmin(samples))
        high = max(float(samples[top]), -_polished_minimum(lambda x: -float(series(x)), dense[top], radius))
        low = min(float(samples[bottom]), _polished_minimum(lambda x: float(series(x)), dense[bottom], radius))
        return low, high
    _, values = _ascending(scan)
    return _parabolic(values, np.argmin(values), -1.0), _parabolic(values, np.argmax(values), 1.0)


def _parabolic(values: np.ndarray, index: int, sign: float) -> float:
    index = int(index)
    if index == 0 or index == len(values) - 1:
        return float(values[index])
    y0, y1, y2 = values[index - 1], values[index], values[index + 1]
    curvature = y0 - 2.0 * y1 + y2
    if curvature == 0.0:
        return float(y1)
    vertex = y1 - (y0 - y2) ** 2 / (8.0 * curvature)
    return float(max(vertex, y1)) if sign > 0 else float(min(vertex, y1))


def visibility(scan: PatternScan) -> float:
    """(max - min) / (max + min) of the fringe.

    Periodic fine scans are refined on their band-limited trigonometric series;
    other scans use parabolic refinement around the sampled extremes.
    """
    low, high = _refined_extremes(scan)
    if high + low <= 0.0 or high - low <= DEGENERATE_SCALE * _scale(scan.probabilities):
        raise DegenerateScanError("flat scan: visibility undefined")
    return float(min(max((high - low) / (high + low), 0.0), 1.0))


def metrics(
    coarse: Optional[PatternScan] = None,
    fine: Optional[PatternScan] = None,
    spec: Optional[SourceSpec] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    baseline_fraction: float = DEFAULT_BASELINE_FRACTION,
) -> EnvelopeStats:
    """Shape, coherence length/time (coarse scan) and visibility (fine scan).

    Coherence length is the FWHM of the upper envelope for bump and symmetric
    shapes and of the lower envelope for dips.

    Raises:
        AnalysisError: when neither scan is given or a scan has the wrong axis.
    """
    if coarse is None and fine is None:
        raise AnalysisError("missing scan: metrics needs a coarse scan, a fine scan, or both")
    fields: Dict[str, Optional[float]] = {}
    if coarse is not None:
        if coarse.delay_unit != "path_m":
            raise AnalysisError("coarse metrics need a scan over optical path (delay unit path_m)")
        if coarse.phase_per_delay is None and spec is not None:
            coarse = coarse.model_copy(update={"phase_per_delay": spec.omega0 / SPEED_OF_LIGHT})
        env = envelopes(coarse, baseline_fraction)
        shape = classify_envelopes(env, tolerance)
        widths = {}
        for name, excursion in (("upper", env.upper - env.baseline), ("lower", env.baseline - env.lower)):
            try:
                widths[name] = fwhm(env.delays, excursion)
            except AnalysisError:
                widths[name] = None
        chosen = "lower" if shape == "dip" else "upper"
        if widths[chosen] is None:
            raise AnalysisError(f"{chosen} envelope of the {shape} pattern has no measurable FWHM")
        fields.update(
            shape=shape,
            upper_fwhm=widths["upper"],
            lower_fwhm=widths["lower"],
            coherence_length=widths[chosen],
            baseline=env.baseline,
        )
    if fine is not None:
        fields["visibility"] = visibility(fine)
    return EnvelopeStats(**fields)
