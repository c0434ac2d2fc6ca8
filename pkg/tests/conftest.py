import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from robustdlm.model import GAUSSIAN, STUDENT_T, DlmSpec, PriorSpec, TimeSeries

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def rw_data(n, seed=0, obs_sd=1.0, sys_sd=1.0):
    rng = np.random.default_rng(seed)
    a = np.cumsum(rng.normal(0.0, sys_sd, n))
    return a + rng.normal(0.0, obs_sd, n)


@pytest.fixture
def gauss_spec():
    return DlmSpec(TimeSeries(rw_data(30, seed=1)), GAUSSIAN, PriorSpec())


@pytest.fixture
def student_spec():
    return DlmSpec(TimeSeries(rw_data(30, seed=1)), STUDENT_T, PriorSpec())
