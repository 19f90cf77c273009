import json

import numpy as np
import pandas as pd
import pytest

from src import analytic_model
from src.noon_config import get_config
from src.noon_errors import ConfigError
from src.noon_harness import (
    NoonHarness,
    counts_path,
    default_output,
    format_summary,
    load_table1,
    main,
    sample_counts,
    worker_count,
)
from src.noon_types import DetectionScheme
from src.scan_io import read_scan


def _scan(config_file, tmp_path, scheme, mode, *extra):
    out = tmp_path / f"scan_{scheme.replace('/', '-')}_{mode}.csv"
    argv = ["scan", "--config", str(config_file), "--scheme", scheme, "--mode", mode, "--out", str(out), *extra]
    assert main(argv) == 0
    return out


def test_scan_then_analyze(config_file, tmp_path, capsys):
    coarse = _scan(config_file, tmp_path, "1/1", "coarse")
    fine = _scan(config_file, tmp_path, "1/1", "fine")
    report = tmp_path / "report.json"
    code = main(["analyze", str(coarse), "--fine", str(fine), "--config", str(config_file), "--json", str(report)])
    assert code == 0
    data = json.loads(report.read_text())
    assert data["scheme"] == "1/1"
    assert data["engine"] == "analytic"
    assert data["stats"]["shape"] == "symmetric"
    assert data["stats"]["coherence_time"] == pytest.approx(1.77e-12, rel=0.01)
    assert data["stats"]["visibility"] == pytest.approx(1.0, abs=1e-3)
    assert data["summary"].startswith("1/1 | symmetric | ")
    assert data["summary"] in capsys.readouterr().out


def test_compare_with_published_row(config_file, tmp_path, capsys):
    coarse = _scan(config_file, tmp_path, "3/1", "coarse")
    assert main(["analyze", str(coarse), "--config", str(config_file), "--compare-table1"]) == 0
    out = capsys.readouterr().out
    assert "3/1 | dip | " in out
    assert "3/1 | dip | 0.40 mm | 1.33 ps | 0.53  (published)" in out


def test_scan_header_records_overrides(config_file, tmp_path):
    out = _scan(config_file, tmp_path, "2/2", "fine", "--mu", "0.1")
    _, header = read_scan(str(out))
    assert header["config"]["source"]["mu"] == 0.1
    assert len(header["config_sha"]) == 64


def test_sampled_counts_are_reproducible(config_file, tmp_path):
    first = _scan(config_file, tmp_path / "a", "1/1", "fine", "--sample", "--seed", "7")
    second = _scan(config_file, tmp_path / "b", "1/1", "fine", "--sample", "--seed", "7")
    a, b = counts_path(str(first)), counts_path(str(second))
    with open(a, "rb") as fa, open(b, "rb") as fb:
        assert fa.read() == fb.read()
    scan, header = read_scan(a)
    assert header["seed"] == 7
    assert scan.counts is not None and scan.counts.sum() > 0


def test_sample_counts_follow_seed(spec, fine_cfg):
    scan = analytic_model.pattern(DetectionScheme(m=1, n=1), spec, fine_cfg)
    one = sample_counts(scan, 1000.0, 1.0, seed=3)
    two = sample_counts(scan, 1000.0, 1.0, seed=3)
    other = sample_counts(scan, 1000.0, 1.0, seed=4)
    np.testing.assert_array_equal(one.counts, two.counts)
    assert not np.array_equal(one.counts, other.counts)


@pytest.mark.parametrize(
    "argv,code",
    [
        (["scan", "--scheme", "9/9"], 2),
        (["scan", "--scheme", "3/0"], 2),
        (["scan", "--scheme", "1/1", "--mu", "-1"], 2),
        (["crosscheck", "--schemes", "1/1", "--grid", "3"], 2),
    ],
)
def test_invalid_inputs_exit_with_config_code(config_file, argv, code):
    assert main(argv + ["--config", str(config_file)]) == code


def test_missing_config_file(tmp_path):
    assert main(["scan", "--config", str(tmp_path / "absent.yaml"), "--scheme", "1/1"]) == 4


def test_flat_scan_cannot_be_analyzed(config_file, tmp_path):
    path = tmp_path / "flat.csv"
    delays = -1.0e-3 + 2.0e-6 * np.arange(1000)
    path.write_text("delay,value\n" + "".join(f"{d!r},0.25\n" for d in delays.tolist()))
    assert main(["analyze", str(path), "--scheme", "1/1", "--config", str(config_file)]) == 3


def test_malformed_scan_file(config_file, tmp_path, capsys):
    path = tmp_path / "broken.csv"
    path.write_text("delay,value\n0.0,0.5\n1.0,abc\n")
    assert main(["analyze", str(path), "--scheme", "1/1", "--config", str(config_file)]) == 4
    assert "line 3" in capsys.readouterr().err


def test_mixed_schemes_are_rejected(config_file, tmp_path):
    coarse = _scan(config_file, tmp_path, "1/1", "coarse")
    fine = _scan(config_file, tmp_path, "2/0", "fine")
    assert main(["analyze", str(coarse), "--fine", str(fine), "--config", str(config_file)]) == 3


def test_crosscheck_small_grid(config_file, capsys):
    assert main(["crosscheck", "--schemes", "1/1,2/0", "--grid", "3x5", "--config", str(config_file)]) == 0
    out = capsys.readouterr().out
    assert "6/6 checks passed" in out
    assert "❌" not in out


def test_crosscheck_exports_oracle_grids(config_file, tmp_path, capsys):
    argv = ["crosscheck", "--schemes", "1/1,2/0", "--grid", "3x5", "--export-grid", str(tmp_path), "--config", str(config_file)]
    assert main(argv) == 0
    assert "Oracle grids written" in capsys.readouterr().out
    frame = pd.read_csv(tmp_path / "oracle_grid_1-1.csv")
    assert list(frame.columns) == ["intensity", "phi", "probability"]
    assert len(frame) == 15
    expected = analytic_model.closed_form(DetectionScheme(m=1, n=1), frame["intensity"].to_numpy(), frame["phi"].to_numpy())
    np.testing.assert_allclose(frame["probability"].to_numpy(), expected, atol=1e-9)
    assert (tmp_path / "oracle_grid_2-0.csv").exists()


def test_forms_written_to_directory(config_file, tmp_path, capsys):
    assert main(["forms", "--schemes", "1/1,3/1", "--out", str(tmp_path), "--config", str(config_file)]) == 0
    assert (tmp_path / "P_1-1.txt").read_text().startswith("# P_1/1(I, phi)")
    assert (tmp_path / "P_3-1.txt").exists()
    assert "# P_3/1(I, phi)" in capsys.readouterr().out


def test_no_command_prints_help(capsys):
    assert main([]) == 0
    assert "crosscheck" in capsys.readouterr().out


def test_worker_count_cap(monkeypatch):
    monkeypatch.setenv("NOON_MAX_WORKERS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("NOON_MAX_WORKERS", "zero")
    with pytest.raises(ConfigError, match="NOON_MAX_WORKERS"):
        worker_count()
    monkeypatch.setenv("NOON_MAX_WORKERS", "0")
    with pytest.raises(ConfigError):
        worker_count()


def test_harness_override_validation(config_file):
    harness = NoonHarness(str(config_file), {"eta": 0.5})
    assert harness.config.scan.eta == 0.5
    assert harness.sha != NoonHarness(str(config_file)).sha
    with pytest.raises(ConfigError):
        NoonHarness(str(config_file), {"dc": 1.0})


def test_harness_shares_cached_config(config_file):
    assert NoonHarness(str(config_file)).config is get_config(str(config_file))
    assert NoonHarness(str(config_file), {"mu": 0.1}).config is not get_config(str(config_file))
    assert get_config(str(config_file)).source.mu == 0.01



def test_paths_and_summary():
    scheme = DetectionScheme(m=3, n=1)
    assert default_output("gaussian", scheme, "fine").endswith("scan_gaussian_3-1_fine.csv")
    assert counts_path("results/a.csv") == "results/a_counts.csv"
    stats = {"shape": "dip", "coherence_length": 4.0e-4, "coherence_time": 1.334e-12, "visibility": 0.5}
    assert format_summary("3/1", stats) == "3/1 | dip | 0.400 mm | 1.33 ps | 0.500"
    assert format_summary("3/1", {"visibility": 0.5}) == "3/1 | - | - | - | 0.500"


def test_published_rows():
    rows = load_table1()
    assert len(rows) == 10
    assert rows["1/1"]["coherence_time_ps"] == pytest.approx(1.77)
