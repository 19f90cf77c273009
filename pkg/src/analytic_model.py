"""Closed-form NOON detection probabilities as cosine series with polynomial-in-I coefficients."""

import logging
import math
import threading
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial import chebyshev
from numpy.polynomial import polynomial as poly
from pydantic import BaseModel, ConfigDict, field_validator

from src.noon_errors import NumericalInvariantError, UnsupportedSchemeError
from src.noon_types import DetectionScheme, PatternScan, ScanConfig, SourceSpec

logger = logging.getLogger(__name__)

FWHM_FACTOR = 2.0 * math.sqrt(2.0 * math.log(2.0))
FIT_TOLERANCE = 1e-9
COEFFICIENT_FLOOR = 1e-12
SIX_PHOTON_SCHEMES = ((3, 3), (4, 2), (5, 1), (6, 0), (2, 4), (1, 5), (0, 6))

ArrayLike = Union[float, np.ndarray]


def indistinguishability(tau: ArrayLike, delta_omega: float) -> ArrayLike:
    """Gaussian temporal overlap exp(-(delta_omega * tau)^2 / 2), normalized to 1 at tau = 0."""
    if not delta_omega > 0:
        raise ValueError(f"delta_omega must be positive, got {delta_omega}")
    return np.exp(-0.5 * (delta_omega * np.asarray(tau, dtype=float)) ** 2)


def delta_omega_from_fwhm(fwhm: float) -> float:
    """Spectral width whose I(tau) envelope has the given FWHM in seconds."""
    if not fwhm > 0:
        raise ValueError(f"fwhm must be positive, got {fwhm}")
    return FWHM_FACTOR / fwhm


def envelope_fwhm(delta_omega: float) -> float:
    """FWHM of I(tau) in seconds (inverse of ``delta_omega_from_fwhm``)."""
    return FWHM_FACTOR / delta_omega


class HarmonicForm(BaseModel):
    """P(I, phi) = sum_k c_k(I) cos(k phi), each c_k a polynomial.

    ``terms`` maps harmonic order to ascending polynomial coefficients in
    ``variable`` (``I`` itself or ``sqrt_I`` for the one-photon form).
    """

    model_config = ConfigDict(frozen=True)

    scheme: Tuple[int, int]
    variable: Literal["I", "sqrt_I"] = "I"
    terms: Dict[int, Tuple[float, ...]]
    reconstructed: bool = False

    @field_validator("terms")
    @classmethod
    def _check_terms(cls, terms: Dict[int, Tuple[float, ...]]) -> Dict[int, Tuple[float, ...]]:
        if not terms:
            raise ValueError("a harmonic form needs at least one term")
        for k, coefficients in terms.items():
            if k < 0 or not coefficients:
                raise ValueError(f"bad term for harmonic {k}")
        return {k: tuple(float(c) for c in terms[k]) for k in sorted(terms)}

    @property
    def harmonics(self) -> List[int]:
        """Harmonic orders whose coefficient polynomial is not identically zero."""
        return [k for k, c in self.terms.items() if any(v != 0.0 for v in c)]

    @property
    def max_degree(self) -> int:
        return max(len(c) - 1 for c in self.terms.values())

    def _argument(self, intensity: ArrayLike) -> ArrayLike:
        intensity = np.asarray(intensity, dtype=float)
        return np.sqrt(intensity) if self.variable == "sqrt_I" else intensity

    def coefficient(self, k: int, intensity: ArrayLike = 1.0) -> ArrayLike:
        if k not in self.terms:
            return 0.0 * np.asarray(intensity, dtype=float)
        return poly.polyval(self._argument(intensity), self.terms[k])

    def evaluate(self, intensity: ArrayLike, phi: ArrayLike) -> ArrayLike:
        phi = np.asarray(phi, dtype=float)
        x = self._argument(intensity)
        total = np.zeros(np.broadcast(x, phi).shape)
        for k, coefficients in self.terms.items():
            total = total + poly.polyval(x, coefficients) * np.cos(k * phi)
        return total if total.ndim else float(total)

    def dominant_harmonic(self, intensity: float = 1.0) -> int:
        """Nonzero harmonic with the largest coefficient magnitude; ties go to the lower order."""
        best, best_size = 0, 0.0
        for k in self.harmonics:
            if k == 0:
                continue
            size = abs(float(self.coefficient(k, intensity)))
            if size > best_size * (1.0 + 1e-9):
                best, best_size = k, size
        return best

    def shifted_by_pi(self) -> "HarmonicForm":
        """Form of the mirrored scheme: P_nm(phi) = P_mn(phi + pi)."""
        terms = {k: tuple(c * (-1) ** k for c in coeffs) for k, coeffs in self.terms.items()}
        return HarmonicForm(
            scheme=(self.scheme[1], self.scheme[0]),
            variable=self.variable,
            terms=terms,
            reconstructed=self.reconstructed,
        )

    def extrema(self, intensity: float = 1.0) -> Tuple[float, float]:
        """Exact (min, max) over phi, via the Chebyshev series in x = cos(phi)."""
        order = max(self.terms)
        series = np.zeros(order + 1)
        for k in self.terms:
            series[k] = float(self.coefficient(k, intensity))
        candidates = [-1.0, 1.0]
        if order >= 2:
            roots = chebyshev.Chebyshev(series).deriv().roots()
            candidates += [r.real for r in roots if abs(r.imag) < 1e-9 and -1.0 <= r.real <= 1.0]
        values = chebyshev.chebval(np.array(candidates), series)
        return float(values.min()), float(values.max())

    def visibility(self, intensity: float = 1.0) -> float:
        low, high = self.extrema(intensity)
        if high + low <= 0:
            return 0.0
        return (high - low) / (high + low)

    def to_text(self) -> str:
        """Plain-text polynomial listing, one harmonic per line.

        Example::

            # P_2/2(I, phi); variable I
            cos(0 phi): 0.375 - 0.125*I + 0.09375*I^2
        """
        symbol = "sqrt(I)" if self.variable == "sqrt_I" else "I"
        label = "reconstructed" if self.reconstructed else "closed form"
        lines = [f"# P_{self.scheme[0]}/{self.scheme[1]}(I, phi); variable {self.variable}; {label}"]
        for k, coefficients in self.terms.items():
            parts = []
            for power, c in enumerate(coefficients):
                if c == 0.0 and len(coefficients) > 1:
                    continue
                factor = "" if power == 0 else (f"*{symbol}" if power == 1 else f"*{symbol}^{power}")
                parts.append(f"{c!r}{factor}")
            lines.append(f"cos({k} phi): " + " + ".join(parts or ["0.0"]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "HarmonicForm":
        header, *rows = [line.strip() for line in text.strip().splitlines() if line.strip()]
        scheme_text = header.split("P_", 1)[1].split("(", 1)[0]
        m, n = (int(v) for v in scheme_text.split("/"))
        variable = "sqrt_I" if "variable sqrt_I" in header else "I"
        symbol = "sqrt(I)" if variable == "sqrt_I" else "I"
        terms: Dict[int, List[float]] = {}
        for row in rows:
            left, right = row.split(":", 1)
            k = int(left.strip()[len("cos("):].split()[0])
            coefficients: Dict[int, float] = {}
            for part in right.split(" + "):
                part = part.strip()
                if f"*{symbol}" in part:
                    value, _, rest = part.partition(f"*{symbol}")
                    power = int(rest[1:]) if rest.startswith("^") else 1
                else:
                    value, power = part, 0
                coefficients[power] = float(value)
            terms[k] = [coefficients.get(p, 0.0) for p in range(max(coefficients) + 1)]
        return cls(scheme=(m, n), variable=variable, terms=terms, reconstructed="reconstructed" in header)


def _closed(scheme: Tuple[int, int], terms: Dict[int, Sequence[float]], variable: str = "I") -> HarmonicForm:
    return HarmonicForm(scheme=scheme, variable=variable, terms={k: tuple(v) for k, v in terms.items()})


CLOSED_FORMS: Dict[Tuple[int, int], HarmonicForm] = {
    (1, 0): _closed((1, 0), {0: [0.5], 1: [0.0, 0.5]}, variable="sqrt_I"),
    (1, 1): _closed((1, 1), {0: [0.5], 2: [0.0, 0.5]}),
    (2, 0): _closed((2, 0), {0: [0.25], 2: [0.0, -0.25]}),
    (2, 2): _closed((2, 2), {0: [12 / 32, -4 / 32, 3 / 32], 2: [0.0, 12 / 32], 4: [0.0, 0.0, 9 / 32]}),
    (3, 1): _closed((3, 1), {0: [4 / 16, 0.0, -1 / 16], 4: [0.0, 0.0, -3 / 16]}),
    (4, 0): _closed((4, 0), {0: [4 / 64, 4 / 64, 1 / 64], 2: [0.0, -12 / 64], 4: [0.0, 0.0, 3 / 64]}),
}


def _key(scheme) -> Tuple[int, int]:
    if isinstance(scheme, DetectionScheme):
        return scheme.as_tuple()
    m, n = scheme
    return (int(m), int(n))


def _check_intensity(intensity: ArrayLike) -> None:
    values = np.asarray(intensity, dtype=float)
    if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
        raise ValueError("indistinguishability must lie in [0, 1]")


def closed_form_for(scheme) -> HarmonicForm:
    """Printed closed form for m + n <= 4, mirrored schemes included."""
    key = _key(scheme)
    if key in CLOSED_FORMS:
        return CLOSED_FORMS[key]
    if key[::-1] in CLOSED_FORMS:
        return CLOSED_FORMS[key[::-1]].shifted_by_pi()
    raise UnsupportedSchemeError(f"no closed form for scheme {key[0]}/{key[1]}")


def closed_form(scheme, intensity: ArrayLike, phi: ArrayLike) -> ArrayLike:
    """Evaluate the closed-form probability of a scheme with m + n <= 4.

    Raises:
        UnsupportedSchemeError: for six-photon or unknown schemes.
        ValueError: for intensity outside [0, 1].
    """
    _check_intensity(intensity)
    return closed_form_for(scheme).evaluate(intensity, phi)


class FitAnsatz(BaseModel):
    model_config = ConfigDict(frozen=True)

    harmonics: Tuple[int, ...] = (0, 2, 4, 6)
    degree: int = 3


DEFAULT_ANSATZ = FitAnsatz()
WIDENED_ANSATZ = FitAnsatz(harmonics=(0, 1, 2, 3, 4, 5, 6), degree=6)

# Independent of the fit nodes
VERIFY_INTENSITIES = (0.07, 0.29, 0.55, 0.81, 0.98)
VERIFY_PHASES = (0.13, 0.61, 1.17, 1.9, 2.47, 3.05, 4.4, 5.83)

_form_cache: Dict[Tuple, HarmonicForm] = {}
_form_lock = threading.Lock()


def _fit_nodes(ansatz: FitAnsatz) -> Tuple[np.ndarray, np.ndarray]:
    intensities = np.linspace(0.0, 1.0, ansatz.degree + 1)
    count = len(ansatz.harmonics)
    top = max(ansatz.harmonics)
    even = all(k % 2 == 0 for k in ansatz.harmonics)
    # Chebyshev nodes in 2*phi for even harmonics, in phi otherwise
    scale = 2.0 if even else 1.0
    if count != (top // 2 + 1 if even else top + 1):
        raise ValueError(f"harmonic set {ansatz.harmonics} must be contiguous")
    phases = (2 * np.arange(count) + 1) * np.pi / (2 * count * scale)
    return intensities, phases


def fit_harmonic_form(
    scheme: Tuple[int, int],
    ansatz: FitAnsatz = DEFAULT_ANSATZ,
    oracle: Optional[Callable[[Tuple[int, int], float, float], float]] = None,
    tolerance: float = FIT_TOLERANCE,
) -> HarmonicForm:
    """Solve exactly for the coefficients of ``ansatz`` from oracle samples, then verify.

    The node grid is a product of equispaced intensities and Chebyshev phases, so
    the design matrix is square and well conditioned.

    Raises:
        NumericalInvariantError: when the fitted form misses the oracle by more
            than ``tolerance`` on the verification grid.
    """
    if oracle is None:
        from src.fock_oracle import oracle_probability as oracle

    intensities, phases = _fit_nodes(ansatz)
    columns = [(k, d) for k in ansatz.harmonics for d in range(ansatz.degree + 1)]
    rows, values = [], []
    for i in intensities:
        for p in phases:
            rows.append([i ** d * math.cos(k * p) for k, d in columns])
            values.append(oracle(scheme, float(i), float(p)))
    solution = np.linalg.solve(np.array(rows), np.array(values))
    solution[np.abs(solution) < COEFFICIENT_FLOOR] = 0.0

    terms: Dict[int, List[float]] = {k: [0.0] * (ansatz.degree + 1) for k in ansatz.harmonics}
    for (k, d), c in zip(columns, solution):
        terms[k][d] = float(c)
    form = HarmonicForm(scheme=scheme, terms={k: tuple(v) for k, v in terms.items()}, reconstructed=True)

    worst = 0.0
    for i in VERIFY_INTENSITIES:
        for p in VERIFY_PHASES:
            worst = max(worst, abs(form.evaluate(i, p) - oracle(scheme, i, p)))
    logger.debug(f"Fit {scheme[0]}/{scheme[1]} with {ansatz}: max verification residual {worst:.2e}")
    if worst > tolerance:
        raise NumericalInvariantError(
            f"harmonic fit for {scheme[0]}/{scheme[1]} misses the oracle",
            [f"residual {worst:.3e} > {tolerance:.1e} with harmonics {ansatz.harmonics}, degree {ansatz.degree}"],
        )
    return form


def six_photon_form(scheme, ansatz: Optional[FitAnsatz] = None) -> HarmonicForm:
    """Reconstructed six-photon form, derived once from the Fock oracle and cached.

    Mirrored schemes (n < m ordering swapped) reuse the fitted form shifted by pi.
    When the default ansatz fails verification it is widened once before giving up.
    """
    key = _key(scheme)
    if key not in SIX_PHOTON_SCHEMES:
        raise UnsupportedSchemeError(f"{key[0]}/{key[1]} is not a six-photon scheme")
    if key[0] < key[1]:
        return six_photon_form(key[::-1], ansatz).shifted_by_pi()

    chosen = ansatz or DEFAULT_ANSATZ
    cache_key = (key, chosen.harmonics, chosen.degree)
    with _form_lock:
        if cache_key in _form_cache:
            return _form_cache[cache_key]
        try:
            form = fit_harmonic_form(key, chosen)
        except NumericalInvariantError as exc:
            if ansatz is not None:
                raise
            logger.warning(f"Default ansatz failed for {key[0]}/{key[1]} ({exc}); widening to {WIDENED_ANSATZ}")
            form = fit_harmonic_form(key, WIDENED_ANSATZ)
        _form_cache[cache_key] = form
        return form


def form_for(scheme) -> HarmonicForm:
    """Closed form for up to four photons, reconstructed form for six."""
    key = _key(scheme)
    if sum(key) == 6:
        return six_photon_form(key)
    return closed_form_for(key)


def binomial_limit(scheme) -> float:
    """Distinguishable-photon value C(N, m) / 2^N shared by every N-photon form at I = 0."""
    m, n = _key(scheme)
    if m + n == 1:
        return 0.5
    return math.comb(m + n, m) / 2 ** (m + n)


def pattern(scheme: DetectionScheme, spec: SourceSpec, cfg: ScanConfig) -> PatternScan:
    """Closed or reconstructed form evaluated along the scan grid with I = I(tau), phi = omega0 * tau."""
    form = form_for(scheme)
    taus = cfg.taus(spec)
    probabilities = form.evaluate(indistinguishability(taus, spec.delta_omega), spec.omega0 * taus)
    return PatternScan(
        scheme=scheme,
        delays=cfg.delays(),
        probabilities=probabilities,
        delay_unit=cfg.delay_unit,
        phase_per_delay=cfg.phase_per_delay(spec),
        engine="analytic",
        reconstructed=form.reconstructed,
    )
