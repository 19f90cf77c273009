"""Brute-force Fock-space model of the polarization NOON interferometer.

The circuit, in order:

1. ``mixer``: half-wave plate at 22.5 deg, H -> (H + V)/sqrt2, V -> (H - V)/sqrt2.
2. ``temporal``: the delayed (V) polarization keeps amplitude sqrt(I) in the matched
   temporal Schmidt mode and moves sqrt(1 - I) into the orthogonal one.
3. ``phase``: e^{i phi} on the matched mode of the delayed polarization.
4. ``mixer2``: second half-wave plate, same matrix as the first.
5. ``pbs``: H routed to channel 1, V to channel 2.
6. ``split_*``: balanced 1 x w fiber couplers, realized as cascades of two-port couplers.

Modes are labeled (channel, port, polarization, temporal) with channel 0 the free-space
bus before the PBS. The state is a sparse map from occupation tuples to amplitudes;
photon number is fixed, so no truncation is involved.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.noon_errors import NumericalInvariantError, UnsupportedSchemeError
from src.noon_types import DetectionScheme, PatternScan, ScanConfig, SourceSpec

logger = logging.getLogger(__name__)

UNITARITY_TOLERANCE = 1e-12
NORM_TOLERANCE = 1e-12
PRUNE_THRESHOLD = 1e-14
MAX_PAIRS = 3
DETECTOR_MODELS = ("threshold", "number-resolving")

Occupation = Tuple[int, ...]


@dataclass(frozen=True)
class ModeLabel:
    channel: int  # 0 = bus before the PBS, 1 = H output, 2 = V output
    port: int
    polarization: str
    temporal: int  # 0 = matched Schmidt mode, 1 = orthogonal remainder


@dataclass(frozen=True)
class ModeLayout:
    """Fixed mode ordering shared by the Fock and Gaussian engines.

    Order: bus (H, V) x temporal, then channel-1 ports x temporal, then channel-2
    ports x temporal.
    """

    modes: Tuple[ModeLabel, ...]

    @classmethod
    def build(cls, width1: int, width2: int, temporal_modes: int = 2) -> "ModeLayout":
        if temporal_modes not in (1, 2):
            raise ValueError("temporal_modes must be 1 or 2")
        if width1 < 1 or width2 < 1:
            raise ValueError("channel widths must be at least 1")
        labels: List[ModeLabel] = []
        for pol in ("H", "V"):
            labels.extend(ModeLabel(0, 0, pol, t) for t in range(temporal_modes))
        for channel, pol, width in ((1, "H", width1), (2, "V", width2)):
            for port in range(width):
                labels.extend(ModeLabel(channel, port, pol, t) for t in range(temporal_modes))
        return cls(tuple(labels))

    @classmethod
    def for_scheme(cls, scheme: DetectionScheme, temporal_modes: int = 2) -> "ModeLayout":
        return cls.build(max(scheme.m, 1), max(scheme.n, 1), temporal_modes)

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def temporal_modes(self) -> int:
        return 1 + max(label.temporal for label in self.modes)

    def width(self, channel: int) -> int:
        return len({label.port for label in self.modes if label.channel == channel})

    def index(self, channel: int, port: int, polarization: str, temporal: int) -> int:
        try:
            return self.modes.index(ModeLabel(channel, port, polarization, temporal))
        except ValueError:
            raise ValueError(f"no mode ({channel}, {port}, {polarization}, {temporal}) in layout") from None

    def bus(self, polarization: str, temporal: int = 0) -> int:
        return self.index(0, 0, polarization, temporal)

    def detector_modes(self, channel: int, port: int) -> Tuple[int, ...]:
        """Modes seen by the detector on ``port`` of ``channel`` (all temporal indices)."""
        return tuple(
            i for i, label in enumerate(self.modes) if label.channel == channel and label.port == port
        )

    def port_groups(self) -> List[Tuple[int, ...]]:
        """Every spatial port including the bus, each with its temporal modes."""
        groups: Dict[Tuple[int, int, str], List[int]] = {}
        for i, label in enumerate(self.modes):
            groups.setdefault((label.channel, label.port, label.polarization), []).append(i)
        return [tuple(v) for v in groups.values()]


@dataclass(frozen=True, eq=False)
class CircuitElement:
    """Linear-optical element: ``matrix[:, j]`` is the image of creation operator j."""

    name: str
    matrix: np.ndarray
    settles: Tuple[Tuple[int, int], ...] = ()  # (channel, port) pairs no later element touches
    active_modes: Tuple[int, ...] = field(init=False, default=())

    def __post_init__(self) -> None:
        matrix = np.ascontiguousarray(self.matrix, dtype=complex)
        size = matrix.shape[0]
        if matrix.shape != (size, size):
            raise ValueError(f"element {self.name}: matrix must be square")
        deviation = np.max(np.abs(matrix.conj().T @ matrix - np.eye(size)))
        if deviation > UNITARITY_TOLERANCE:
            raise NumericalInvariantError(f"element {self.name} is not unitary", [f"max |U^dag U - 1| = {deviation:.3e}"])
        identity = np.eye(size)
        active = tuple(
            int(i) for i in range(size)
            if np.any(matrix[i, :] != identity[i, :]) or np.any(matrix[:, i] != identity[:, i])
        )
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "active_modes", active)

    @property
    def local_matrix(self) -> np.ndarray:
        modes = list(self.active_modes)
        return np.ascontiguousarray(self.matrix[np.ix_(modes, modes)])


def _two_mode(
    layout: ModeLayout,
    name: str,
    pairs: Iterable[Tuple[int, int]],
    block: np.ndarray,
    settles: Tuple[Tuple[int, int], ...] = (),
) -> CircuitElement:
    """Embed the same 2x2 block on each (a, b) mode pair."""
    matrix = np.eye(layout.size, dtype=complex)
    for a, b in pairs:
        matrix[np.ix_([a, b], [a, b])] = block
    return CircuitElement(name, matrix, settles)


def mixer(layout: ModeLayout, name: str = "mixer") -> CircuitElement:
    block = np.array([[1.0, 1.0], [1.0, -1.0]]) / math.sqrt(2.0)
    pairs = [(layout.bus("H", t), layout.bus("V", t)) for t in range(layout.temporal_modes)]
    return _two_mode(layout, name, pairs, block)


def temporal_rotation(layout: ModeLayout, intensity: float) -> CircuitElement:
    """Split the delayed polarization into matched (sqrt I) and orthogonal (sqrt(1 - I)) parts."""
    if layout.temporal_modes == 1:
        if abs(intensity - 1.0) > 1e-12:
            raise ValueError("partial indistinguishability needs two temporal modes")
        return CircuitElement("temporal", np.eye(layout.size, dtype=complex))
    overlap = math.sqrt(intensity)
    remainder = math.sqrt(max(0.0, 1.0 - intensity))
    block = np.array([[overlap, -remainder], [remainder, overlap]])
    return _two_mode(layout, "temporal", [(layout.bus("V", 0), layout.bus("V", 1))], block)


def phase_shift(layout: ModeLayout, phi: float) -> CircuitElement:
    matrix = np.eye(layout.size, dtype=complex)
    target = layout.bus("V", 0)
    matrix[target, target] = complex(math.cos(phi), math.sin(phi))
    return CircuitElement("phase", matrix)


def polarizing_splitter(layout: ModeLayout) -> CircuitElement:
    matrix = np.zeros((layout.size, layout.size), dtype=complex)
    swaps = {}
    for t in range(layout.temporal_modes):
        for channel, pol in ((1, "H"), (2, "V")):
            a, b = layout.bus(pol, t), layout.index(channel, 0, pol, t)
            swaps[a], swaps[b] = b, a
    for j in range(layout.size):
        matrix[swaps.get(j, j), j] = 1.0
    return CircuitElement("pbs", matrix)


def splitter_tree(layout: ModeLayout, channel: int) -> List[CircuitElement]:
    """Balanced 1 x w coupler as a cascade: stage j keeps 1/(w - j) of what reaches port j."""
    width = layout.width(channel)
    pol = "H" if channel == 1 else "V"
    elements = []
    for stage in range(width - 1):
        keep = 1.0 / (width - stage)
        c, s = math.sqrt(keep), math.sqrt(1.0 - keep)
        block = np.array([[c, -s], [s, c]])
        pairs = [
            (layout.index(channel, stage, pol, t), layout.index(channel, stage + 1, pol, t))
            for t in range(layout.temporal_modes)
        ]
        settles = ((channel, stage),) if stage < width - 2 else ((channel, stage), (channel, stage + 1))
        elements.append(_two_mode(layout, f"split_ch{channel}_{stage}", pairs, block, settles))
    return elements


@dataclass(frozen=True, eq=False)
class InterferometerCircuit:
    layout: ModeLayout
    elements: Tuple[CircuitElement, ...]

    @classmethod
    def build(cls, layout: ModeLayout, intensity: float, phi: float) -> "InterferometerCircuit":
        if not 0.0 <= intensity <= 1.0:
            raise ValueError(f"indistinguishability {intensity} outside [0, 1]")
        elements = [
            mixer(layout, "mixer"),
            temporal_rotation(layout, intensity),
            phase_shift(layout, phi),
            mixer(layout, "mixer2"),
            polarizing_splitter(layout),
        ]
        elements += splitter_tree(layout, 1) + splitter_tree(layout, 2)
        return cls(layout, tuple(elements))

    def unitary(self) -> np.ndarray:
        total = np.eye(self.layout.size, dtype=complex)
        for element in self.elements:
            total = element.matrix @ total
        return total


class FockState:
    """Sparse superposition over occupation vectors of a ModeLayout."""

    def __init__(self, layout: ModeLayout, amplitudes: Dict[Occupation, complex]):
        for occupation in amplitudes:
            if len(occupation) != layout.size:
                raise ValueError(f"occupation of length {len(occupation)} on a {layout.size}-mode layout")
        self.layout = layout
        self.amplitudes = dict(amplitudes)

    @classmethod
    def vacuum(cls, layout: ModeLayout) -> "FockState":
        return cls(layout, {(0,) * layout.size: 1.0 + 0j})

    def norm_squared(self) -> float:
        return float(sum(abs(a) ** 2 for a in self.amplitudes.values()))

    def photon_numbers(self) -> List[int]:
        return sorted({sum(occ) for occ in self.amplitudes})

    def probabilities(self) -> Dict[Occupation, float]:
        return {occ: abs(a) ** 2 for occ, a in self.amplitudes.items()}

    def project(self, keep: Callable[[Occupation], bool]) -> "FockState":
        return FockState(self.layout, {occ: a for occ, a in self.amplitudes.items() if keep(occ)})


def build_input(pairs: int, layout: ModeLayout) -> FockState:
    """(a_H^dag a_V^dag)^k |0> / k! in the matched temporal mode."""
    if not 1 <= pairs <= MAX_PAIRS:
        raise ValueError(f"pairs={pairs} outside supported range 1..{MAX_PAIRS}")
    occupation = [0] * layout.size
    occupation[layout.bus("H")] = pairs
    occupation[layout.bus("V")] = pairs
    return FockState(layout, {tuple(occupation): 1.0 + 0j})


def single_photon_input(layout: ModeLayout) -> FockState:
    """One H photon; the idler is blocked for the one-photon scheme."""
    occupation = [0] * layout.size
    occupation[layout.bus("H")] = 1
    return FockState(layout, {tuple(occupation): 1.0 + 0j})


@lru_cache(maxsize=4096)
def _local_expansion(matrix_bytes: bytes, size: int, occupation: Occupation) -> Tuple[Tuple[Occupation, complex], ...]:
    """Output occupations and amplitudes for one local input occupation."""
    local = np.frombuffer(matrix_bytes, dtype=complex).reshape(size, size)
    poly: Dict[Occupation, complex] = {(0,) * size: 1.0 + 0j}
    for j, count in enumerate(occupation):
        column = [(i, complex(local[i, j])) for i in range(size) if local[i, j] != 0]
        for _ in range(count):
            grown: Dict[Occupation, complex] = defaultdict(complex)
            for mono, coeff in poly.items():
                for i, u in column:
                    bumped = list(mono)
                    bumped[i] += 1
                    grown[tuple(bumped)] += coeff * u
            poly = grown
    norm_in = math.sqrt(math.prod(math.factorial(k) for k in occupation))
    out = []
    for mono, coeff in poly.items():
        amplitude = coeff * math.sqrt(math.prod(math.factorial(k) for k in mono)) / norm_in
        if abs(amplitude) > PRUNE_THRESHOLD:
            out.append((mono, amplitude))
    return tuple(out)


def _apply_element(state: FockState, element: CircuitElement) -> FockState:
    modes = element.active_modes
    if not modes:
        return state
    key = element.local_matrix.tobytes()
    size = len(modes)
    result: Dict[Occupation, complex] = defaultdict(complex)
    for occupation, amplitude in state.amplitudes.items():
        local = tuple(occupation[m] for m in modes)
        if not any(local):
            result[occupation] += amplitude
            continue
        target = list(occupation)
        for mono, coeff in _local_expansion(key, size, local):
            for m, k in zip(modes, mono):
                target[m] = k
            result[tuple(target)] += amplitude * coeff
    return FockState(state.layout, {occ: a for occ, a in result.items() if abs(a) > PRUNE_THRESHOLD})


def evolve(
    state: FockState,
    circuit: InterferometerCircuit,
    sector: Optional[Tuple[int, int]] = None,
) -> FockState:
    """Push ``state`` through every element, checking norm conservation after each.

    With ``sector=(m, n)`` the state is projected right after the PBS onto exactly
    m photons in channel 1 and n in channel 2, and, when a channel holds as many
    photons as it has ports, each port is projected onto one photon as soon as its
    splitter stage has run. Both projections keep every outcome in which all m + n
    detectors fire, so click probabilities of that scheme are unchanged; the full
    outcome distribution needs ``sector=None``.
    """
    if state.layout != circuit.layout:
        raise ValueError(f"state has {state.layout.size} modes, circuit expects {circuit.layout.size}")
    layout = state.layout
    current = state
    for element in circuit.elements:
        before = current.norm_squared()
        current = _apply_element(current, element)
        drift = abs(current.norm_squared() - before)
        if drift > NORM_TOLERANCE * max(before, 1.0):
            raise NumericalInvariantError(f"norm drift after {element.name}", [f"|delta norm^2| = {drift:.3e}"])
        logger.debug(f"{element.name}: {len(current.amplitudes)} terms, |delta norm^2| {drift:.1e}")
        if sector is None:
            continue
        if element.name == "pbs":
            ch1 = [i for i, label in enumerate(layout.modes) if label.channel == 1]
            ch2 = [i for i, label in enumerate(layout.modes) if label.channel == 2]
            want1, want2 = sector
            current = current.project(
                lambda occ: sum(occ[i] for i in ch1) == want1 and sum(occ[i] for i in ch2) == want2
            )
        for channel, port in element.settles:
            if sector[channel - 1] == layout.width(channel):
                modes = layout.detector_modes(channel, port)
                current = current.project(lambda occ, modes=modes: sum(occ[i] for i in modes) == 1)
    return current


def _detector_groups(layout: ModeLayout, scheme: DetectionScheme) -> List[Tuple[int, ...]]:
    if scheme.m > layout.width(1) or scheme.n > layout.width(2):
        raise UnsupportedSchemeError(
            f"scheme {scheme.label} exceeds splitter tree width {layout.width(1)}/{layout.width(2)}"
        )
    return [layout.detector_modes(1, p) for p in range(scheme.m)] + [
        layout.detector_modes(2, p) for p in range(scheme.n)
    ]


def click_probability(state: FockState, scheme: DetectionScheme, detector_model: str = "threshold") -> float:
    """Probability that all m + n detectors fire.

    ``threshold`` detectors fire on one or more photons; ``number-resolving``
    requires exactly one photon per detector. Detectors ignore the temporal index.
    """
    if detector_model not in DETECTOR_MODELS:
        raise ValueError(f"unknown detector model {detector_model!r}")
    groups = _detector_groups(state.layout, scheme)
    total = 0.0
    for occupation, amplitude in state.amplitudes.items():
        counts = [sum(occupation[i] for i in group) for group in groups]
        fired = all(c == 1 for c in counts) if detector_model == "number-resolving" else all(c >= 1 for c in counts)
        if fired:
            total += abs(amplitude) ** 2
    return total


def outcome_distribution(state: FockState) -> Dict[Tuple[int, ...], float]:
    """Photon counts per spatial port (bus ports included), summed over temporal modes."""
    groups = state.layout.port_groups()
    distribution: Dict[Tuple[int, ...], float] = defaultdict(float)
    for occupation, amplitude in state.amplitudes.items():
        distribution[tuple(sum(occupation[i] for i in g) for g in groups)] += abs(amplitude) ** 2
    return dict(distribution)


def routing_factor(scheme: DetectionScheme) -> float:
    """Probability that w photons leaving a balanced 1 x w tree hit w distinct ports."""
    factor = 1.0
    for width in (scheme.m, scheme.n):
        if width > 1:
            factor *= math.factorial(width) / width ** width
    return factor


def _as_scheme(scheme) -> DetectionScheme:
    if isinstance(scheme, DetectionScheme):
        return scheme
    m, n = scheme
    return DetectionScheme(m=m, n=n)


def oracle_probability(scheme, intensity: float, phi: float, detector_model: str = "threshold") -> float:
    """Probability of m photons in channel 1 and n in channel 2 for an N-photon event.

    The all-detectors-click probability is divided by the splitter routing factor,
    which turns it into the photon-number probability the closed forms describe.

    Raises:
        UnsupportedSchemeError: for m + n outside {1, 2, 4, 6}.
        ValueError: for intensity outside [0, 1].
    """
    scheme = _as_scheme(scheme)
    if scheme.total not in (1, 2, 4, 6):
        raise UnsupportedSchemeError(f"oracle supports 1, 2, 4 or 6 photons, not {scheme.total}")
    layout = ModeLayout.for_scheme(scheme)
    circuit = InterferometerCircuit.build(layout, float(intensity), float(phi))
    state = single_photon_input(layout) if scheme.total == 1 else build_input(scheme.pairs, layout)
    final = evolve(state, circuit, sector=(scheme.m, scheme.n))
    probability = click_probability(final, scheme, detector_model)
    if detector_model == "threshold":
        probability /= routing_factor(scheme)
    return probability


def _oracle_point(args: Tuple[int, int, float, float]) -> float:
    m, n, intensity, phi = args
    return oracle_probability((m, n), intensity, phi)


def oracle_grid(scheme, intensities: Sequence[float], phases: Sequence[float], mapper: Callable = map) -> pd.DataFrame:
    """Evaluate the oracle on the (I, phi) product grid; one row per point."""
    scheme = _as_scheme(scheme)
    points = [(scheme.m, scheme.n, float(i), float(p)) for i in intensities for p in phases]
    values = list(mapper(_oracle_point, points))
    return pd.DataFrame(
        {
            "intensity": [p[2] for p in points],
            "phi": [p[3] for p in points],
            "probability": values,
        }
    )


def oracle_pattern(scheme: DetectionScheme, spec: SourceSpec, cfg: ScanConfig, mapper: Callable = map) -> PatternScan:
    """Oracle evaluated along a scan grid, with I from the Gaussian overlap and phi = omega0 * tau."""
    from src.analytic_model import indistinguishability

    taus = cfg.taus(spec)
    intensities = indistinguishability(taus, spec.delta_omega)
    points = [(scheme.m, scheme.n, float(i), float(spec.omega0 * t)) for i, t in zip(intensities, taus)]
    logger.info(f"Oracle scan {scheme.label}: {len(points)} points")
    return PatternScan(
        scheme=scheme,
        delays=cfg.delays(),
        probabilities=list(mapper(_oracle_point, points)),
        delay_unit=cfg.delay_unit,
        phase_per_delay=cfg.phase_per_delay(spec),
        engine="oracle",
    )
