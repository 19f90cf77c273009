import math

import numpy as np
import pytest

from src.crosscheck import check_gaussian_limit, gaussian_fringe
from src.fock_oracle import InterferometerCircuit, ModeLayout
from src.gaussian_engine import (
    Detector,
    DetectorBank,
    GaussianState,
    LossChannel,
    apply_symplectic,
    coincidence_probability,
    multipair_pattern,
    pair_scaling_slope,
    squeezed_source,
)
from src.noon_errors import NumericalInvariantError
from src.noon_types import DetectionScheme
from src.pattern_analysis import classify, visibility

FOUR_PHOTON_OR_LESS = [(1, 0), (1, 1), (2, 0), (2, 2), (3, 1), (4, 0)]


def _scheme(m, n):
    return DetectionScheme(m=m, n=n)


def test_squeezed_source_photon_numbers():
    layout = ModeLayout.build(1, 1)
    state = squeezed_source(0.3, layout)
    state.check()
    assert state.mean_photon_number(layout.bus("H")) == pytest.approx(0.3)
    assert state.mean_photon_number(layout.bus("V")) == pytest.approx(0.3)
    assert state.total_photon_number() == pytest.approx(0.6)


def test_reduced_source_mode_is_thermal():
    layout = ModeLayout.build(1, 1)
    state = squeezed_source(0.3, layout)
    np.testing.assert_allclose(state.symplectic_eigenvalues([layout.bus("H")]), [0.8], atol=1e-12)


def test_passive_circuit_keeps_photon_number():
    layout = ModeLayout.build(2, 2)
    state = squeezed_source(0.1, layout)
    for element in InterferometerCircuit.build(layout, 0.6, 1.1).elements:
        state = apply_symplectic(state, element)
    state.check()
    assert state.total_photon_number() == pytest.approx(0.2, abs=1e-14)


def test_loss_scales_photon_number():
    layout = ModeLayout.build(1, 1)
    state = squeezed_source(0.2, layout)
    lossy = apply_symplectic(state, LossChannel((layout.bus("H"),), 0.25))
    assert lossy.mean_photon_number(layout.bus("H")) == pytest.approx(0.05)
    assert lossy.mean_photon_number(layout.bus("V")) == pytest.approx(0.2)
    lossy.check()


def test_active_squeezing_of_vacuum():
    layout = ModeLayout.build(1, 1)
    k, r = layout.size, 0.4
    matrix = np.eye(2 * k)
    matrix[0, 0], matrix[k, k] = math.exp(-r), math.exp(r)
    state = apply_symplectic(GaussianState.vacuum(layout), matrix)
    assert state.mean_photon_number(0) == pytest.approx(math.sinh(r) ** 2)


def test_non_symplectic_matrix_is_rejected():
    layout = ModeLayout.build(1, 1)
    with pytest.raises(NumericalInvariantError, match="not symplectic"):
        apply_symplectic(GaussianState.vacuum(layout), 2.0 * np.eye(2 * layout.size))


def test_detector_validation():
    with pytest.raises(ValueError, match="efficiency out of range"):
        Detector(1.5, 0.0, (0,))
    with pytest.raises(ValueError, match="dark-count probability out of range"):
        Detector(0.5, 1.0, (0,))
    with pytest.raises(ValueError, match="overlap"):
        DetectorBank((Detector(0.5, 0.0, (0, 1)), Detector(0.5, 0.0, (1, 2))))


@pytest.mark.parametrize("m,n", FOUR_PHOTON_OR_LESS)
def test_no_light_no_darks_never_clicks(m, n):
    assert coincidence_probability(_scheme(m, n), 0.0, 0.2, 0.0, 0.3) == 0.0


@pytest.mark.parametrize("m,n", [(1, 0), (1, 1), (2, 2), (3, 1)])
def test_dark_counts_alone(m, n):
    dc = 0.05
    probability = coincidence_probability(_scheme(m, n), 0.0, 0.2, dc, 0.3)
    assert probability == pytest.approx(dc ** (m + n), rel=1e-6)


def test_single_detector_sees_thermal_light():
    # idler blocked: the H arm alone is thermal with mean mu, so a bright fringe clicks with mu*eta/(1 + mu*eta)
    mu, eta = 0.05, 0.5
    bright = coincidence_probability(_scheme(1, 0), mu, eta, 0.0, 0.0)
    dark = coincidence_probability(_scheme(1, 0), mu, eta, 0.0, np.pi)
    assert bright == pytest.approx(mu * eta / (1 + mu * eta), rel=1e-9)
    assert dark == pytest.approx(0.0, abs=1e-14)


def test_temporal_mode_count_does_not_change_full_overlap():
    scheme = _scheme(2, 2)
    one = coincidence_probability(scheme, 0.05, 0.3, 1e-4, 0.7, temporal_modes=1)
    two = coincidence_probability(scheme, 0.05, 0.3, 1e-4, 0.7, temporal_modes=2)
    assert one == pytest.approx(two, rel=1e-10)


@pytest.mark.parametrize("m,n", FOUR_PHOTON_OR_LESS)
def test_small_mu_matches_closed_forms(m, n):
    # four-photon shapes are checked deeper in the single-pair regime; visibilities stay at mu = 1e-3
    mu = 1e-3 if m + n <= 2 else 2e-4
    (result,) = check_gaussian_limit([_scheme(m, n)], mu=mu)
    assert result.passed, result.detail
    if m + n >= 2:
        assert "visibility gap" in result.detail


def test_blocked_idler_visibility_is_dark_count_limited():
    # mu * eta = 2e-4 against dc = 1e-4: (3 - 1) / (3 + 1)
    assert visibility(gaussian_fringe(_scheme(1, 0), 1e-3, 0.2, 1e-4)) == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize("m,n", [(1, 1), (2, 2), (3, 1)])
def test_dark_counts_raise_coincidences(m, n):
    values = [coincidence_probability(_scheme(m, n), 0.05, 0.2, dc, 0.7) for dc in (0.0, 1e-4, 1e-3, 1e-2)]
    assert all(a < b for a, b in zip(values, values[1:]))


@pytest.mark.parametrize("m,n", [(1, 1), (2, 2), (3, 1)])
def test_efficiency_raises_coincidences(m, n):
    values = [coincidence_probability(_scheme(m, n), 0.05, eta, 0.0, 0.7) for eta in (0.1, 0.3, 0.6, 1.0)]
    assert all(a < b for a, b in zip(values, values[1:]))



@pytest.mark.parametrize("m,n", [(1, 1), (2, 0), (2, 2), (3, 1), (4, 0)])
def test_multipair_emission_reduces_visibility(m, n):
    low = visibility(gaussian_fringe(_scheme(m, n), 0.01, 0.2, 1e-4))
    high = visibility(gaussian_fringe(_scheme(m, n), 0.6, 0.2, 1e-4))
    assert low > high


@pytest.mark.parametrize("m,n", [(1, 0), (1, 1), (2, 0), (2, 2), (3, 1), (4, 0)])
def test_pair_scaling(m, n):
    scheme = _scheme(m, n)
    assert pair_scaling_slope(scheme) == pytest.approx(scheme.pairs, abs=0.05)


def test_multipair_pattern_on_fine_grid(spec, fine_cfg):
    scan = multipair_pattern(_scheme(1, 1), spec, fine_cfg)
    assert scan.engine == "gaussian"
    assert len(scan.probabilities) == fine_cfg.count
    assert int(np.argmax(scan.probabilities)) in (0, 50, 100, 150)


@pytest.mark.slow
@pytest.mark.parametrize("m,n", [(3, 3), (4, 2), (5, 1), (6, 0)])
def test_six_photon_multipair_trends(m, n):
    scheme = _scheme(m, n)
    assert pair_scaling_slope(scheme) == pytest.approx(3.0, abs=0.05)
    low = visibility(gaussian_fringe(scheme, 0.01, 0.2, 1e-4))
    high = visibility(gaussian_fringe(scheme, 0.6, 0.2, 1e-4))
    assert low > high


@pytest.mark.slow
def test_visibility_ordering_at_high_mu():
    def v(m, n):
        return visibility(gaussian_fringe(_scheme(m, n), 0.6, 0.2, 1e-4))

    assert v(4, 0) > v(3, 1)
    assert v(6, 0) > v(4, 2)


@pytest.mark.slow
def test_six_photon_visibilities_at_high_mu():
    values = {
        (m, n): visibility(gaussian_fringe(_scheme(m, n), 0.6, 0.2, 1e-4))
        for m, n in [(3, 3), (4, 2), (5, 1), (6, 0)]
    }
    assert max(values, key=values.get) == (6, 0)
    assert min(values, key=values.get) == (4, 2)


@pytest.mark.slow
def test_bright_three_three_pattern_is_a_dip(spec, coarse_cfg):
    scan = multipair_pattern(_scheme(3, 3), spec.model_copy(update={"mu": 0.6}), coarse_cfg)
    assert classify(scan) == "dip"
