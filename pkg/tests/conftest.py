"""
Shared fixtures: seeded random systems and the pendulum example
"""

import numpy as np
import pytest

from app.engine import perf
from app.engine.youla import ControllerStructure
from app.presets import pendulum

from tests.systems import random_standard_plant, stabilized_pair


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def pair(rng):
    return stabilized_pair(rng)


@pytest.fixture
def observer_pair(rng):
    return stabilized_pair(rng, structure=ControllerStructure.OBSERVER_BASED)


@pytest.fixture
def standard_plant(rng):
    return random_standard_plant(rng)


@pytest.fixture(scope="session")
def shaped_pendulum():
    return pendulum.shaped_plant()


@pytest.fixture(scope="session")
def pendulum_design(shaped_pendulum):
    return perf.loopshape_design(shaped_pendulum, pendulum.GAMMA)
