import numpy as np
import pytest

from atwflow.anisotropy import EuclideanAnisotropy
from atwflow.geometry import SetState, disk_level
from atwflow.grid import Grid
from atwflow.relax import SolverParams


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running scenario test")


@pytest.fixture(scope="session")
def grid128():
    return Grid((128, 128), 1.0 / 128)


@pytest.fixture(scope="session")
def grid96():
    return Grid((96, 96), 1.0 / 96)


@pytest.fixture(scope="session")
def euclid():
    return EuclideanAnisotropy()


@pytest.fixture()
def fast_params():
    return SolverParams(pd_gap_tol=2e-5, pd_max_iters=40000)


def disk_state(grid, center=(0.5, 0.5), radius=0.3):
    return SetState.from_level(grid, disk_level(grid, center, radius))


def radial_step_root(radius, h, f=0.0):
    """Radius after one step: solves (rho - R)/h + 1/rho - f = 0 near R."""
    from scipy.optimize import brentq

    def fun(rho):
        return (rho - radius) / h + 1.0 / rho - f

    lo = radius / 2
    hi = radius * 2
    return brentq(fun, lo, hi, xtol=1e-14)


def area_radius(state):
    return float(np.sqrt(state.area() / np.pi))
