import math

import numpy as np
import pytest

from src import analytic_model
from src.analytic_model import closed_form_for
from src.noon_errors import AnalysisError, DegenerateScanError, InsufficientSamplingError
from src.noon_types import SPEED_OF_LIGHT, DetectionScheme, PatternScan, ScanConfig
from src.pattern_analysis import (
    baseline,
    classify,
    envelopes,
    fwhm,
    harmonic_content,
    metrics,
    visibility,
    window_blocks,
    window_length,
)

FINE_PHASES = 4.0 * np.pi * np.arange(200) / 200


def _scheme(m, n):
    return DetectionScheme(m=m, n=n)


def _fine_scan(m, n, values):
    return PatternScan(
        scheme=_scheme(m, n),
        delays=FINE_PHASES,
        probabilities=values,
        delay_unit="phase_rad",
        phase_per_delay=1.0,
    )


@pytest.mark.parametrize(
    "m,n,shape",
    [(1, 0, "symmetric"), (1, 1, "symmetric"), (2, 0, "symmetric"), (2, 2, "bump"), (3, 1, "dip"), (4, 0, "bump")],
)
def test_shape_classification(spec, dense_coarse_cfg, m, n, shape):
    scan = analytic_model.pattern(_scheme(m, n), spec, dense_coarse_cfg)
    assert classify(scan) == shape


def test_coherence_times_of_one_and_two_photon_patterns(spec, dense_coarse_cfg):
    one = metrics(coarse=analytic_model.pattern(_scheme(1, 0), spec, dense_coarse_cfg))
    two = metrics(coarse=analytic_model.pattern(_scheme(1, 1), spec, dense_coarse_cfg))
    assert two.coherence_time == pytest.approx(1.77e-12, rel=0.01)
    assert one.coherence_time == pytest.approx(2.50e-12, rel=0.01)
    assert one.coherence_time / two.coherence_time == pytest.approx(math.sqrt(2.0), rel=0.01)
    assert two.coherence_length == pytest.approx(two.coherence_time * SPEED_OF_LIGHT)


def test_dip_uses_lower_envelope(spec, dense_coarse_cfg):
    stats = metrics(coarse=analytic_model.pattern(_scheme(3, 1), spec, dense_coarse_cfg))
    assert stats.shape == "dip"
    assert stats.coherence_length == stats.lower_fwhm
    assert stats.baseline == pytest.approx(0.25, abs=1e-3)


def test_default_motor_grid_is_usable(spec, coarse_cfg):
    scan = analytic_model.pattern(_scheme(1, 1), spec, coarse_cfg)
    env = envelopes(scan)
    assert env.window < coarse_cfg.count // 5
    assert classify(scan) == "symmetric"


def test_default_motor_grid_coherence_times(spec, coarse_cfg):
    one = metrics(coarse=analytic_model.pattern(_scheme(1, 0), spec, coarse_cfg))
    two = metrics(coarse=analytic_model.pattern(_scheme(1, 1), spec, coarse_cfg))
    assert two.coherence_time == pytest.approx(1.77e-12, rel=0.01)
    assert one.coherence_time == pytest.approx(2.50e-12, rel=0.01)
    assert one.coherence_time / two.coherence_time == pytest.approx(math.sqrt(2.0), rel=0.01)


@pytest.mark.parametrize("m,n,shape", [(3, 1, "dip"), (2, 2, "bump")])
def test_shape_survives_gain_and_offset(spec, coarse_cfg, m, n, shape):
    scan = analytic_model.pattern(_scheme(m, n), spec, coarse_cfg)
    scaled = PatternScan(
        scheme=scan.scheme,
        delays=scan.delays,
        probabilities=0.5 * scan.probabilities + 0.2,
        delay_unit=scan.delay_unit,
        phase_per_delay=scan.phase_per_delay,
    )
    assert classify(scan) == shape
    assert classify(scaled) == shape


def test_insufficient_sampling(spec):
    cfg = ScanConfig(mode="coarse", start=-1.0e-3, step=1.0e-4, count=20)
    with pytest.raises(InsufficientSamplingError, match="insufficient sampling density"):
        classify(analytic_model.pattern(_scheme(1, 1), spec, cfg))


def test_window_length_prefers_accuracy():
    assert window_length([0.025], 1000) == 40
    with pytest.raises(InsufficientSamplingError):
        window_length([0.5], 1000)


@pytest.mark.parametrize("jitter", [0.0, 1e-2])
def test_fitted_envelopes_of_constant_fringe(jitter):
    steps = np.arange(1000)
    phases = 0.0628 * steps + jitter * np.sin(steps)
    scan = PatternScan(
        scheme=_scheme(1, 1),
        delays=phases,
        probabilities=0.5 + 0.3 * np.cos(2.0 * phases + 0.4),
        delay_unit="phase_rad",
        phase_per_delay=1.0,
    )
    env = envelopes(scan)
    np.testing.assert_allclose(env.upper, 0.8, atol=1e-9)
    np.testing.assert_allclose(env.lower, 0.2, atol=1e-9)


def test_short_tail_joins_last_block():
    assert window_blocks(81, 10)[-1] == (70, 81)
    assert window_blocks(85, 10)[-1] == (80, 85)
    assert window_blocks(80, 10) == [(s, s + 10) for s in range(0, 80, 10)]
    assert all(stop - start >= 2 for start, stop in window_blocks(41, 4))


def test_flat_scan_is_degenerate():
    flat = _fine_scan(1, 1, np.full(200, 0.25))
    with pytest.raises(DegenerateScanError):
        visibility(flat)
    with pytest.raises(DegenerateScanError):
        harmonic_content(flat)


@pytest.mark.parametrize(
    "m,n,dominant,present",
    [
        (1, 0, 1, (1,)),
        (1, 1, 2, (2,)),
        (2, 0, 2, (2,)),
        (2, 2, 2, (2, 4)),
        (3, 1, 4, (4,)),
        (4, 0, 2, (2, 4)),
    ],
)
def test_fringe_harmonics(spec, fine_cfg, m, n, dominant, present):
    content = harmonic_content(analytic_model.pattern(_scheme(m, n), spec, fine_cfg))
    assert content.dominant == dominant
    assert content.present == present


@pytest.mark.slow
def test_six_photon_fringe_harmonics(spec, fine_cfg):
    content = harmonic_content(analytic_model.pattern(_scheme(3, 3), spec, fine_cfg))
    assert content.dominant == 2
    assert 6 in content.present


@pytest.mark.parametrize("scheme", [(1, 0), (1, 1), (2, 0), (2, 2), (3, 1), (4, 0), (0, 2)])
def test_numeric_visibility_matches_symbolic(scheme):
    form = closed_form_for(scheme)
    scan = _fine_scan(*scheme, form.evaluate(1.0, FINE_PHASES))
    assert visibility(scan) == pytest.approx(form.visibility(1.0), abs=1e-6)


def test_visibility_between_samples():
    # extremes at phi = k*pi/2 fall between samples of a grid shifted by a third of a step
    shifted = FINE_PHASES + (4.0 * np.pi / 200) / 3.0
    values = 0.5 + 0.3 * np.cos(2.0 * shifted)
    scan = PatternScan(scheme=_scheme(1, 1), delays=shifted, probabilities=values, delay_unit="phase_rad")
    assert visibility(scan) == pytest.approx(0.6, abs=1e-9)


def test_visibility_of_partial_fringe():
    values = closed_form_for((1, 1)).evaluate(0.4, FINE_PHASES)
    assert visibility(_fine_scan(1, 1, values)) == pytest.approx(0.4, abs=1e-9)


def test_harmonics_need_whole_periods():
    scan = PatternScan(
        scheme=_scheme(1, 1),
        delays=np.linspace(0.0, 3.0, 50),
        probabilities=0.5 + 0.5 * np.cos(2 * np.linspace(0.0, 3.0, 50)),
        delay_unit="phase_rad",
    )
    with pytest.raises(AnalysisError, match="whole 2\\*pi periods"):
        harmonic_content(scan)


def test_metrics_input_checks(spec, fine_cfg):
    with pytest.raises(AnalysisError, match="missing scan"):
        metrics()
    fine = analytic_model.pattern(_scheme(1, 1), spec, fine_cfg)
    with pytest.raises(AnalysisError, match="path_m"):
        metrics(coarse=fine)
    stats = metrics(fine=fine)
    assert stats.shape is None and stats.coherence_length is None
    assert stats.visibility == pytest.approx(1.0, abs=1e-3)


def test_baseline_uses_both_ends():
    values = np.concatenate([np.full(5, 1.0), np.zeros(90), np.full(5, 3.0)])
    assert baseline(values, 0.1) == pytest.approx(2.0)


def test_fwhm_of_gaussian():
    x = np.linspace(-5.0, 5.0, 10_001)
    sigma = 0.7
    width = fwhm(x, np.exp(-0.5 * (x / sigma) ** 2))
    assert width == pytest.approx(2.0 * math.sqrt(2.0 * math.log(2.0)) * sigma, rel=1e-5)
    with pytest.raises(AnalysisError, match="half maximum"):
        fwhm(x, np.ones_like(x))
