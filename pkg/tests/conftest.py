import numpy as np
import pytest

from wsindy_ips.density import build_domain, density_field
from wsindy_ips.experiment import PRESETS, make_init
from wsindy_ips.sde_sim import SimConfig, get_model, simulate
from wsindy_ips.test_functions import make_test_basis


@pytest.fixture(scope="session")
def small_qanr():
    """QANR with N=500 particles, 64 bins and 20 snapshots, plus a matching test basis."""
    data = simulate(get_model("qanr1d_const"), make_init(PRESETS["qanr1d"]["init"]), SimConfig(0.001, 10, 500, 1, 20, seed=11))
    grid = build_domain(data, 64)
    U = density_field(data, grid)
    basis = make_test_basis(grid, data.times, 8, 4, 3, 2, 5, 3)
    return U, basis


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE

    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
