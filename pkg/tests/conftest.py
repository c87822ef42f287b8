import numpy as np
import pytest

from sdndispatch.settings import NetworkSetting


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)


def make_setting(**overrides):
    """Small single-switch setting the unit tests start from."""
    base = dict(
        capacities=[9000.0, 9000.0],
        arrival_rates=[5000.0],
        delay=[[0.002, 0.02]],
        t_max=1.0,
        report_period=0.05,
    )
    base.update(overrides)
    return NetworkSetting(**base)


@pytest.fixture
def tiny_setting():
    return make_setting()
