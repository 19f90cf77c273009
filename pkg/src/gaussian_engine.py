"""Multi-pair model: squeezed vacuum, symplectic interferometer, lossy threshold detectors.

Covariances use xxpp ordering with vacuum = identity/2. States store the excess
``delta = sigma - identity/2`` so that weak light keeps full relative precision:
no-click probabilities are then 1/sqrt(det(1 + delta_S)) and the
inclusion-exclusion terms are formed as expm1 of log-determinants.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from src.fock_oracle import CircuitElement, InterferometerCircuit, ModeLayout
from src.noon_errors import NumericalInvariantError
from src.noon_types import DetectionScheme, PatternScan, ScanConfig, SourceSpec, check_dark_count, check_efficiency

logger = logging.getLogger(__name__)

SYMPLECTIC_TOLERANCE = 1e-12
UNCERTAINTY_TOLERANCE = 1e-10
BONFERRONI_TOLERANCE = 1e-12
PIVOT_FLOOR = 1e-300


def symplectic_form(modes: int) -> np.ndarray:
    identity = np.eye(modes)
    zeros = np.zeros((modes, modes))
    return np.block([[zeros, identity], [-identity, zeros]])


def unitary_to_symplectic(unitary: np.ndarray) -> np.ndarray:
    """Real xxpp symplectic image of a passive mode unitary."""
    x, y = unitary.real, unitary.imag
    return np.block([[x, -y], [y, x]])


@dataclass(frozen=True, eq=False)
class GaussianState:
    """Zero-mean Gaussian state on a ModeLayout, stored as excess covariance."""

    layout: ModeLayout
    excess: np.ndarray

    @property
    def num_modes(self) -> int:
        return self.layout.size

    @property
    def covariance(self) -> np.ndarray:
        return self.excess + 0.5 * np.eye(2 * self.num_modes)

    @classmethod
    def vacuum(cls, layout: ModeLayout) -> "GaussianState":
        return cls(layout, np.zeros((2 * layout.size, 2 * layout.size)))

    def mean_photon_number(self, mode: int) -> float:
        k = self.num_modes
        return 0.5 * float(self.excess[mode, mode] + self.excess[mode + k, mode + k])

    def total_photon_number(self) -> float:
        return 0.5 * float(np.trace(self.excess))

    def check(self) -> None:
        """Raise unless the covariance is symmetric and obeys sigma + i Omega / 2 >= 0."""
        asymmetry = np.max(np.abs(self.excess - self.excess.T)) if self.excess.size else 0.0
        if asymmetry > UNCERTAINTY_TOLERANCE:
            raise NumericalInvariantError("covariance is not symmetric", [f"max asymmetry {asymmetry:.3e}"])
        bound = self.covariance + 0.5j * symplectic_form(self.num_modes)
        lowest = float(np.min(linalg.eigvalsh(bound)))
        if lowest < -UNCERTAINTY_TOLERANCE:
            raise NumericalInvariantError("uncertainty relation violated", [f"min eigenvalue {lowest:.3e}"])

    def symplectic_eigenvalues(self, modes: Sequence[int]) -> np.ndarray:
        """Symplectic spectrum of the reduced covariance on ``modes`` (1/2 for pure modes)."""
        k = self.num_modes
        index = list(modes) + [m + k for m in modes]
        reduced = self.covariance[np.ix_(index, index)]
        spectrum = np.abs(linalg.eigvals(1j * symplectic_form(len(modes)) @ reduced))
        return np.sort(spectrum)[::2]


@dataclass(frozen=True)
class LossChannel:
    """Pure loss with transmissivity ``eta`` on each listed mode."""

    modes: Tuple[int, ...]
    eta: float

    def __post_init__(self) -> None:
        check_efficiency(self.eta)


@dataclass(frozen=True)
class Detector:
    efficiency: float
    dark_count: float
    modes: Tuple[int, ...]

    def __post_init__(self) -> None:
        check_efficiency(self.efficiency)
        check_dark_count(self.dark_count)
        if not self.modes:
            raise ValueError("a detector must cover at least one mode")


@dataclass(frozen=True)
class DetectorBank:
    detectors: Tuple[Detector, ...]

    def __post_init__(self) -> None:
        seen: List[int] = []
        for detector in self.detectors:
            seen.extend(detector.modes)
        if len(seen) != len(set(seen)):
            raise ValueError("detector mode sets overlap")

    @classmethod
    def for_scheme(cls, layout: ModeLayout, scheme: DetectionScheme, eta: float, dc: float) -> "DetectorBank":
        ports = [(1, p) for p in range(scheme.m)] + [(2, p) for p in range(scheme.n)]
        return cls(tuple(Detector(eta, dc, layout.detector_modes(c, p)) for c, p in ports))


def squeezed_source(mu: float, layout: ModeLayout) -> GaussianState:
    """Two-mode squeezed vacuum between the matched H and V bus modes, sinh^2 r = mu."""
    if not mu >= 0:
        raise ValueError(f"mean pair number must be non-negative, got {mu}")
    k = layout.size
    h, v = layout.bus("H"), layout.bus("V")
    excess = np.zeros((2 * k, 2 * k))
    correlation = math.sqrt(mu * (1.0 + mu))
    for mode in (h, v):
        excess[mode, mode] = mu
        excess[mode + k, mode + k] = mu
    excess[h, v] = excess[v, h] = correlation
    excess[h + k, v + k] = excess[v + k, h + k] = -correlation
    return GaussianState(layout, excess)


Element = Union[CircuitElement, LossChannel, np.ndarray]


def apply_symplectic(state: GaussianState, element: Element) -> GaussianState:
    """Apply a passive element, a raw symplectic matrix, or a loss channel.

    Raises:
        NumericalInvariantError: when a matrix fails S Omega S^T = Omega.
    """
    k = state.num_modes
    if isinstance(element, LossChannel):
        scale = np.ones(2 * k)
        root = math.sqrt(element.eta)
        for mode in element.modes:
            scale[mode] = scale[mode + k] = root
        return GaussianState(state.layout, state.excess * np.outer(scale, scale))

    passive = isinstance(element, CircuitElement)
    if passive:
        if not element.active_modes:
            return state
        matrix = unitary_to_symplectic(element.matrix)
        name = element.name
    else:
        matrix = np.asarray(element, dtype=float)
        name = "matrix"
    if matrix.shape != (2 * k, 2 * k):
        raise ValueError(f"{name}: expected a {2 * k}x{2 * k} symplectic matrix, got {matrix.shape}")
    omega = symplectic_form(k)
    deviation = np.max(np.abs(matrix @ omega @ matrix.T - omega))
    if deviation > SYMPLECTIC_TOLERANCE:
        raise NumericalInvariantError(f"{name} is not symplectic", [f"max |S Omega S^T - Omega| = {deviation:.3e}"])
    excess = matrix @ state.excess @ matrix.T
    if not passive:
        # Active elements also squeeze the vacuum part
        excess = excess + 0.5 * (matrix @ matrix.T - np.eye(2 * k))
    return GaussianState(state.layout, 0.5 * (excess + excess.T))


def _no_click_term(excess: np.ndarray, modes: Sequence[int], log_dark: float) -> float:
    """P(no photon in ``modes``) * P(no dark count) - 1, without cancellation."""
    k = excess.shape[0] // 2
    index = list(modes) + [m + k for m in modes]
    eigenvalues = linalg.eigvalsh(excess[np.ix_(index, index)])
    if np.min(1.0 + eigenvalues) <= PIVOT_FLOOR:
        raise NumericalInvariantError(
            "vacuum projection determinant is not positive",
            [f"min eigenvalue of 1 + delta_S: {np.min(1.0 + eigenvalues):.3e}"],
        )
    return math.expm1(-0.5 * float(np.sum(np.log1p(eigenvalues))) + log_dark)


def click_coincidence(state: GaussianState, bank: DetectorBank, scheme: DetectionScheme) -> float:
    """Probability that every detector in ``bank`` clicks.

    Detector efficiency is applied as loss on the detector's modes, then
    P = sum_T (-1)^|T| P(no click on T), computed from the expm1 terms so the
    constant parts cancel exactly. Bonferroni partial sums are checked against
    the result at every order.
    """
    if len(bank.detectors) != scheme.total:
        raise ValueError(f"scheme {scheme.label} needs {scheme.total} detectors, bank has {len(bank.detectors)}")
    lossy = state
    for detector in bank.detectors:
        if detector.efficiency < 1.0:
            lossy = apply_symplectic(lossy, LossChannel(detector.modes, detector.efficiency))

    count = len(bank.detectors)
    log_dark = [math.log1p(-d.dark_count) for d in bank.detectors]
    by_order = [0.0] * (count + 1)
    for size in range(1, count + 1):
        for subset in combinations(range(count), size):
            modes = [m for d in subset for m in bank.detectors[d].modes]
            by_order[size] += _no_click_term(lossy.excess, modes, sum(log_dark[d] for d in subset))
    probability = sum((-1) ** size * by_order[size] for size in range(1, count + 1))

    partial = 0.0
    for order in range(count):
        partial += (-1) ** order * (math.comb(count, order) + by_order[order])
        if (-1) ** order * (partial - probability) < -BONFERRONI_TOLERANCE:
            raise NumericalInvariantError(
                "inclusion-exclusion bound violated",
                [f"order {order}: partial sum {partial:.6e} vs probability {probability:.6e}"],
            )
    if probability < -BONFERRONI_TOLERANCE or probability > 1.0 + BONFERRONI_TOLERANCE:
        raise NumericalInvariantError("click probability outside [0, 1]", [f"p = {probability:.6e}"])
    return min(max(probability, 0.0), 1.0)


@lru_cache(maxsize=64)
def _layout(m: int, n: int, temporal_modes: int) -> ModeLayout:
    return ModeLayout.build(max(m, 1), max(n, 1), temporal_modes)


def coincidence_probability(
    scheme: DetectionScheme,
    mu: float,
    eta: float,
    dc: float,
    phi: float,
    intensity: float = 1.0,
    temporal_modes: Optional[int] = None,
) -> float:
    """All-click probability p_mn(mu, eta, dc, phi) at indistinguishability ``intensity``.

    One temporal mode per polarization is used when ``intensity`` is 1, two otherwise,
    unless ``temporal_modes`` forces a choice.
    """
    if temporal_modes is None:
        temporal_modes = 1 if intensity == 1.0 else 2
    layout = _layout(scheme.m, scheme.n, temporal_modes)
    state = squeezed_source(mu, layout)
    if scheme.total == 1:
        # idler blocked: only the H photon enters the interferometer
        state = apply_symplectic(state, LossChannel((layout.bus("V"),), 0.0))
    for element in InterferometerCircuit.build(layout, intensity, phi).elements:
        state = apply_symplectic(state, element)
    return click_coincidence(state, DetectorBank.for_scheme(layout, scheme, eta, dc), scheme)


def _multipair_point(args: Tuple[int, int, float, float, float, float, float]) -> float:
    m, n, mu, eta, dc, intensity, phi = args
    return coincidence_probability(DetectionScheme(m=m, n=n), mu, eta, dc, phi, intensity)


def multipair_pattern(
    scheme: DetectionScheme,
    spec: SourceSpec,
    cfg: ScanConfig,
    mapper: Callable = map,
) -> PatternScan:
    """p_mn along a scan: fine scans sweep phi at I = 1, coarse scans drive I(tau) too."""
    from src.analytic_model import indistinguishability

    if cfg.mode == "fine":
        phases = cfg.grid()
        intensities = np.ones_like(phases)
    else:
        taus = cfg.taus(spec)
        phases = spec.omega0 * taus
        intensities = indistinguishability(taus, spec.delta_omega)
    points = [
        (scheme.m, scheme.n, spec.mu, cfg.eta, cfg.dc, float(i), float(p)) for i, p in zip(intensities, phases)
    ]
    logger.info(f"Gaussian scan {scheme.label}: {len(points)} points at mu={spec.mu}, eta={cfg.eta}, dc={cfg.dc}")
    return PatternScan(
        scheme=scheme,
        delays=cfg.delays(),
        probabilities=list(mapper(_multipair_point, points)),
        delay_unit=cfg.delay_unit,
        phase_per_delay=cfg.phase_per_delay(spec),
        engine="gaussian",
    )


def fringe_average(scheme: DetectionScheme, mu: float, eta: float = 1.0, dc: float = 0.0, samples: int = 16) -> float:
    """Coincidence probability averaged over one full phase period at I = 1."""
    phases = 2.0 * np.pi * (np.arange(samples) + 0.5) / samples
    return float(np.mean([coincidence_probability(scheme, mu, eta, dc, float(p)) for p in phases]))


def pair_scaling_slope(
    scheme: DetectionScheme,
    mus: Sequence[float] = (1e-3, 2e-3, 5e-3, 1e-2),
    eta: float = 1.0,
    dc: float = 0.0,
) -> float:
    """Log-log slope of the phase-averaged coincidence probability against mu."""
    averages = [fringe_average(scheme, mu, eta, dc) for mu in mus]
    slope, _ = np.polyfit(np.log(mus), np.log(averages), 1)
    return float(slope)
