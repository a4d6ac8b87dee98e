import math

import pytest

from fbm_forge import minimizer
from fbm_forge.ld import LDParams
from fbm_forge.surface import OBSTRUCTION_FACTOR, build_initial, build_pre_initial, construction_params

# criterion number -> (passed, one-line detail), filled by test_acceptance
ACCEPTANCE = {}

SMALL_GRIDS = {"bridge_grid": (48, 16), "disk_grid": (96, 32)}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")


@pytest.fixture(scope="session")
def params01():
    return construction_params(0.1)


@pytest.fixture(scope="session")
def pre_initial01(params01):
    return build_pre_initial(params01)


@pytest.fixture(scope="session")
def initial01(params01):
    return build_initial(params01)


@pytest.fixture(scope="session")
def small_initial01(params01):
    return build_initial(params01, **SMALL_GRIDS)


@pytest.fixture(scope="session")
def newton01(initial01):
    return minimizer.newton_solve(initial01)


@pytest.fixture(scope="session")
def continuation01():
    return minimizer.zeta_continuation(0.1)


@pytest.fixture(scope="session")
def pi8_params():
    tau = 0.02
    return LDParams(
        omega=math.pi / 8, zeta=0.0, tau=tau, tau_bar=tau, alpha=0.75, delta_obs=OBSTRUCTION_FACTOR * tau**0.75
    )


@pytest.fixture(scope="session")
def pi8_small(pi8_params):
    return build_initial(pi8_params, **SMALL_GRIDS)
