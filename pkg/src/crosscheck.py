"""Equivalence suites between the closed forms, the Fock oracle and the Gaussian engine."""

import logging
import math
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel

from src import analytic_model, gaussian_engine
from src.fock_oracle import oracle_grid
from src.noon_errors import ConfigError, NoonError
from src.noon_types import DetectionScheme, PatternScan
from src.pattern_analysis import visibility

logger = logging.getLogger(__name__)

BASE_SCHEMES = ((1, 0), (1, 1), (2, 0), (2, 2), (3, 1), (4, 0), (3, 3), (4, 2), (5, 1), (6, 0))
ORACLE_TOLERANCE = 1e-9
SHAPE_TOLERANCE = 0.02
SLOPE_TOLERANCE = 0.05
SMALL_MU = 1e-3
FINE_PHASES = 4.0 * np.pi * np.arange(200) / 200
SIX_PHOTON_INTENSITIES = (0.15, 0.5, 0.9)
SIX_PHOTON_PHASES = (0.3, 1.1, 2.2, 3.7, 5.1)


class CheckResult(BaseModel):
    suite: str
    scheme: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""


def parse_schemes(text: str) -> List[DetectionScheme]:
    """``all`` or a comma-separated list such as ``1/1,3/1``."""
    if text.strip() == "all":
        return [DetectionScheme(m=m, n=n) for m, n in BASE_SCHEMES]
    return [DetectionScheme.parse(part) for part in text.split(",") if part.strip()]


def parse_grid(text: str) -> Tuple[np.ndarray, np.ndarray]:
    """``AxB``: A intensities over [0, 1] and B phases over [0, 2*pi], endpoints included."""
    try:
        a, b = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError("invalid grid", [f"expected AxB, got {text!r}"]) from None
    if a < 2 or b < 2:
        raise ConfigError("invalid grid", ["both grid sizes must be at least 2"])
    return np.linspace(0.0, 1.0, a), np.linspace(0.0, 2.0 * np.pi, b)


def check_closed_forms(
    schemes: Iterable[DetectionScheme],
    grid: Tuple[np.ndarray, np.ndarray],
    mapper: Callable = map,
    frames: Optional[Dict[str, pd.DataFrame]] = None,
) -> List[CheckResult]:
    """Closed forms against the oracle on the (I, phi) grid, for m + n <= 4.

    Oracle grids land in ``frames`` under the scheme label when it is given.
    """
    results = []
    intensities, phases = grid
    for scheme in schemes:
        if scheme.total > 4:
            continue
        frame = oracle_grid(scheme, intensities, phases, mapper)
        if frames is not None:
            frames[scheme.label] = frame
        expected = analytic_model.closed_form(scheme, frame["intensity"].to_numpy(), frame["phi"].to_numpy())
        errors = np.abs(frame["probability"].to_numpy() - expected)
        worst = int(np.argmax(errors))
        results.append(
            CheckResult(
                suite="closed-form vs oracle",
                scheme=scheme.label,
                passed=bool(errors[worst] <= ORACLE_TOLERANCE),
                worst=float(errors[worst]),
                tolerance=ORACLE_TOLERANCE,
                detail=f"worst at I={frame['intensity'].iloc[worst]:.3f}, phi={frame['phi'].iloc[worst]:.4f}",
            )
        )
    return results


def check_six_photon_forms(
    schemes: Iterable[DetectionScheme],
    mapper: Callable = map,
    frames: Optional[Dict[str, pd.DataFrame]] = None,
) -> List[CheckResult]:
    """Reconstructed six-photon forms against fresh oracle points off the fit grid."""
    results = []
    for scheme in schemes:
        if scheme.total != 6:
            continue
        try:
            form = analytic_model.six_photon_form(scheme)
        except NoonError as exc:
            results.append(CheckResult(suite="six-photon form vs oracle", scheme=scheme.label, passed=False,
                                       worst=math.inf, tolerance=ORACLE_TOLERANCE, detail=str(exc)))
            continue
        frame = oracle_grid(scheme, SIX_PHOTON_INTENSITIES, SIX_PHOTON_PHASES, mapper)
        if frames is not None:
            frames[scheme.label] = frame
        expected = form.evaluate(frame["intensity"].to_numpy(), frame["phi"].to_numpy())
        worst = float(np.max(np.abs(frame["probability"].to_numpy() - expected)))
        results.append(
            CheckResult(
                suite="six-photon form vs oracle",
                scheme=scheme.label,
                passed=worst <= ORACLE_TOLERANCE,
                worst=worst,
                tolerance=ORACLE_TOLERANCE,
            )
        )
    return results


def _normalized(values: np.ndarray) -> np.ndarray:
    return (values - values.min()) / (values.max() - values.min())


def gaussian_fringe(scheme: DetectionScheme, mu: float, eta: float, dc: float, phases: Sequence[float] = FINE_PHASES) -> PatternScan:
    probabilities = [gaussian_engine.coincidence_probability(scheme, mu, eta, dc, float(p)) for p in phases]
    return PatternScan(
        scheme=scheme,
        delays=np.asarray(phases, dtype=float),
        probabilities=probabilities,
        delay_unit="phase_rad",
        phase_per_delay=1.0,
        engine="gaussian",
    )


def check_gaussian_limit(
    schemes: Iterable[DetectionScheme],
    mu: float = SMALL_MU,
    eta: float = 0.2,
    dc: float = 1e-4,
    visibility_mu: float = SMALL_MU,
) -> List[CheckResult]:
    """Small-mu Gaussian fringes against the closed forms.

    Shapes are compared at dc = 0 after min-max normalization. Visibilities of
    the two- to four-photon schemes are also compared at ``visibility_mu`` with
    dark counts on; the blocked-idler 1/0 scheme is left out because its dark
    counts are of the same order as mu * eta.
    """
    results = []
    for scheme in schemes:
        if scheme.total > 4:
            continue
        form = analytic_model.closed_form_for(scheme)
        target = _normalized(form.evaluate(1.0, FINE_PHASES))
        shape = _normalized(np.asarray(gaussian_fringe(scheme, mu, eta, 0.0).probabilities))
        worst = float(np.max(np.abs(shape - target)))
        detail = f"shape deviation {worst:.2e}"
        if scheme.total >= 2:
            gap = abs(visibility(gaussian_fringe(scheme, visibility_mu, eta, dc)) - form.visibility(1.0))
            detail += f", visibility gap {gap:.2e}"
            worst = max(worst, gap)
        results.append(
            CheckResult(
                suite=f"gaussian mu={mu:g} vs closed form",
                scheme=scheme.label,
                passed=worst <= SHAPE_TOLERANCE,
                worst=worst,
                tolerance=SHAPE_TOLERANCE,
                detail=detail,
            )
        )
    return results


def check_pair_scaling(schemes: Iterable[DetectionScheme]) -> List[CheckResult]:
    """Log-log slope of the coincidence probability against mu equals the pairs needed."""
    results = []
    for scheme in schemes:
        slope = gaussian_engine.pair_scaling_slope(scheme)
        gap = abs(slope - scheme.pairs)
        results.append(
            CheckResult(
                suite="pair-number scaling",
                scheme=scheme.label,
                passed=gap <= SLOPE_TOLERANCE,
                worst=gap,
                tolerance=SLOPE_TOLERANCE,
                detail=f"slope {slope:.4f}, expected {scheme.pairs}",
            )
        )
    return results


def run_all(
    schemes: Sequence[DetectionScheme],
    grid: Tuple[np.ndarray, np.ndarray],
    mapper: Callable = map,
    frames: Optional[Dict[str, pd.DataFrame]] = None,
) -> List[CheckResult]:
    results = check_closed_forms(schemes, grid, mapper, frames)
    results += check_six_photon_forms(schemes, mapper, frames)
    results += check_gaussian_limit(schemes)
    results += check_pair_scaling(schemes)
    for result in results:
        log = logger.info if result.passed else logger.error
        log(f"{result.suite} {result.scheme}: {'PASS' if result.passed else 'FAIL'} ({result.worst:.2e})")
    return results


def render_matrix(results: Sequence[CheckResult]) -> str:
    lines = []
    for result in results:
        mark = "✅" if result.passed else "❌"
        line = f"{mark} {result.suite:<34} {result.scheme:<4} worst {result.worst:.2e} (tol {result.tolerance:.0e})"
        lines.append(line + (f"  {result.detail}" if result.detail else ""))
    passed = sum(r.passed for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines)
