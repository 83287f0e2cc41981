"""Fixtures for testing."""
from pathlib import Path

import numpy as np
import pytest

from direct_integral.ode_core import (
    Trajectory,
    builtin_duplicated_column,
    builtin_exponential,
    builtin_fitzhugh_nagumo,
    builtin_lotka_volterra,
    solve_ode,
)

CONFIG_DIR = Path(__file__).parent.parent / "configs"

FHN_NU = np.array([0.34, 0.2, 3.0])
FHN_XI = np.array([0.0, 0.1])
LV_THETA = np.array([0.5, 0.5, 0.5, 0.5])
LV_XI = np.array([1.0, 0.5])


@pytest.fixture
def exponential_model():
    """Return the scalar growth model."""
    return builtin_exponential()


@pytest.fixture
def duplicated_model():
    """Return the model with two identical columns."""
    return builtin_duplicated_column()


@pytest.fixture
def fhn_model():
    """Return the FitzHugh-Nagumo model."""
    return builtin_fitzhugh_nagumo()


@pytest.fixture
def lv_model():
    """Return the Lotka-Volterra model."""
    return builtin_lotka_volterra()


@pytest.fixture
def fhn_truth(fhn_model) -> Trajectory:
    """Return the FitzHugh-Nagumo solution on a 4001-point grid over [0, 20]."""
    return solve_ode(fhn_model, fhn_model.h(FHN_NU), FHN_XI, np.linspace(0, 20, 4001))


@pytest.fixture
def lv_truth(lv_model) -> Trajectory:
    """Return the Lotka-Volterra solution on a 4001-point grid over [0, 14.9]."""
    return solve_ode(lv_model, LV_THETA, LV_XI, np.linspace(0, 14.9, 4001))


@pytest.fixture
def exponential_path() -> Trajectory:
    """Return exp(t / 2) on a 2001-point grid over [0, 1]."""
    times = np.linspace(0, 1, 2001)
    return Trajectory(times, np.exp(0.5 * times))
