import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from activeirs.channels import Scenario
from activeirs.system import ChannelSet, Instance, SystemConfig

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_channels(rng, M, N, K_I, K_E, scale=1.0):
    def cn(*shape):
        return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    return ChannelSet(F=cn(N, M), h_d=cn(K_I, M), h_r=cn(K_I, N), g_d=cn(K_E, M), g_r=cn(K_E, N))


def random_u(rng, N, scale=1.0):
    return scale * (rng.standard_normal(N) + 1j * rng.standard_normal(N))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_config():
    return SystemConfig(M=3, N=4, K_I=2, K_E=2, P_A=1.0, P_I=0.5, sigma_z2=0.01, sigma_i2=0.1,
                        gamma=(1.0, 2.0), E=(0.1, 0.2), alpha=(1.0, 0.5), mu=(1.0, 2.0))


@pytest.fixture
def desk_p1():
    sc = Scenario(M=4, N=8, K_I=2, K_E=2)
    return Instance(sc.system_config(), sc.channels(0))


@pytest.fixture
def desk_p2():
    sc = Scenario(M=4, N=8, K_I=2, K_E=2, P_A_dbm=30, P_I_dbm=10, E_uW=1.0)
    return Instance(sc.system_config(), sc.channels(0))


@pytest.fixture
def desk_wpt():
    sc = Scenario(M=4, N=8, K_I=0, K_E=3)
    return Instance(sc.system_config(), sc.channels(0))


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
