import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kktembed import flow
from kktembed.data import Dataset, gaussian_blobs
from kktembed.net import NetworkSpec
from kktembed.transform import SplitSpec, build_split

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")

INV_SQRT2 = 1.0 / np.sqrt(2.0)

# criterion lines collected by test_acceptance and echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def blobs():
    return gaussian_blobs(20, 2, separation=1.0, gap=0.2, seed=0)


@pytest.fixture(scope="session")
def two_layer():
    return NetworkSpec((2, 4, 1))


@pytest.fixture(scope="session")
def theta0(two_layer):
    return 0.5 * np.random.default_rng(0).normal(size=two_layer.num_params)


@pytest.fixture(scope="session")
def half_split(two_layer):
    return build_split(two_layer, SplitSpec(1, 0, (INV_SQRT2, INV_SQRT2)))


@pytest.fixture(scope="session")
def paired_run(two_layer, half_split, theta0, blobs):
    """RK4 paired run on the blob fixture up to 30x norm growth."""
    cfg = flow.FlowConfig(norm_growth=30.0)
    return flow.paired_integrate(two_layer, half_split, theta0, blobs, flow.LossSpec(), cfg)


@pytest.fixture(scope="session")
def two_point():
    return Dataset.from_pairs([((1.0, 0.0), 1.0), ((-1.0, 0.0), -1.0)])
