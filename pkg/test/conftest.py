"""
Global autouse fixtures and shared synthetic panels used by all tests
"""

# Standard
import os

# Third Party
import pytest

# Local
from prodloom import log as prodloom_log
from prodloom.synth import SynthConfig, generate_synthetic

# Small panel shared by the fast tests
SMALL_CONFIG = SynthConfig(n_plants=160, n_years=6, n_other_plants=20)
SMALL_SEED = 3

# Full-size panel for the recovery tests
FULL_CONFIG = SynthConfig()
FULL_SEED = 11


@pytest.fixture(autouse=True)
def configure_logging():
    """Fixture that configures logging from the env. It is auto-used, so if
    imported, it will automatically configure for each test.
    """
    prodloom_log.configure(os.environ.get("LOG_LEVEL", "warning"))


@pytest.fixture(scope="session")
def small_synth():
    """(panel, truth) of a small synthetic panel"""
    return generate_synthetic(SMALL_CONFIG, seed=SMALL_SEED)


@pytest.fixture(scope="session")
def full_synth():
    """(panel, truth) of the 500-plant, 8-year synthetic panel"""
    return generate_synthetic(FULL_CONFIG, seed=FULL_SEED)
