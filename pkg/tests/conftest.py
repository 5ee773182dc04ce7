import json

import numpy as np
import pytest

from curvewarn.colors import Theme
from curvewarn.model import BikeParams
from curvewarn.road import curve_profile, s_curve_profile, save_profile, straight_profile


@pytest.fixture(autouse=True)
def plain_output():
    """Keep console output free of colour codes in every test."""
    Theme.disable()
    yield


@pytest.fixture
def bike():
    return BikeParams()


@pytest.fixture
def straight_road():
    return straight_profile(1200.0)


@pytest.fixture
def curve_road():
    """Left curve of 50 m radius after a 300 m straight."""
    return curve_profile(50.0, 300.0, 80.0, 400.0)


@pytest.fixture
def s_curve_road():
    return s_curve_profile(60.0, 300.0, 70.0, 400.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def write_profile(tmp_path):
    """Save a profile under tmp_path and return its path."""

    def write(profile, name="road.json"):
        path = tmp_path / name
        save_profile(profile, path)
        return path

    return write


@pytest.fixture
def write_json(tmp_path):
    def write(payload, name):
        path = tmp_path / name
        path.write_text(json.dumps(payload))
        return path

    return write
