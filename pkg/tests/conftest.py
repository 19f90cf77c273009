import os
import shutil

import pytest

from src.noon_config import clear_config_cache
from src.noon_types import ScanConfig, SourceSpec

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIG_PATH = os.path.join(ROOT, "config", "noon_config.yaml")

OMEGA0 = 1.1891739693e15
DELTA_OMEGA = 1.330407e12


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    """Serial scans, no stray overrides, fresh config cache."""
    monkeypatch.setenv("NOON_MAX_WORKERS", "1")
    for name in ("NOON_CONFIG", "NOON_MU", "NOON_ETA", "NOON_DC", "NOON_MODE", "NOON_PATH_MULTIPLIER", "NOON_MAX_PHOTONS"):
        monkeypatch.delenv(name, raising=False)
    clear_config_cache()
    yield
    clear_config_cache()


@pytest.fixture
def spec():
    return SourceSpec(omega0=OMEGA0, delta_omega=DELTA_OMEGA, mu=0.01, rep_rate=7.6e7)


@pytest.fixture
def fine_cfg():
    return ScanConfig(mode="fine", start=0.0, step=0.06283185307179587, count=200)


@pytest.fixture
def coarse_cfg():
    return ScanConfig(mode="coarse", start=-1.0e-3, step=2.0e-6, count=1000)


@pytest.fixture
def dense_coarse_cfg():
    """12.5 nm steps over +-1.5 mm: every fringe period sampled densely."""
    return ScanConfig(mode="coarse", start=-1.5e-3, step=1.25e-8, count=240_000)


@pytest.fixture
def config_file(tmp_path):
    """Copy of the shipped configuration that tests may edit."""
    path = tmp_path / "noon_config.yaml"
    shutil.copy(CONFIG_PATH, path)
    return path


@pytest.fixture
def table1_path():
    return os.path.join(ROOT, "config", "table1.yaml")
