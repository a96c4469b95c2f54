import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from perspcam.body_model import make_default_model, synthesize

settings.register_profile(
    "default", deadline=None, max_examples=50,
    suppress_health_check=[HealthCheck.function_scoped_fixture])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return make_default_model()


@pytest.fixture(scope="session")
def rest_mesh(model):
    return synthesize(model, np.zeros(model.num_betas), np.zeros((model.joint_count, 3)))


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        terminalreporter.write_line(results[number])
