import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from coopnet.datasets import SplitSpec, split, synthetic_gaussians

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def mnist_dir() -> Path | None:
    """Directory with the four MNIST IDX files, if one is configured."""
    for cand in (os.environ.get("COOPNET_MNIST_DIR"),
                 Path(__file__).resolve().parents[1] / "data" / "mnist"):
        if cand and Path(cand, "t10k-images-idx3-ubyte").exists():
            return Path(cand)
        if cand and Path(cand, "t10k-images-idx3-ubyte.gz").exists():
            return Path(cand)
    return None


@pytest.fixture(scope="session")
def blobs():
    data = synthetic_gaussians(3, 80, 4, 4.0, seed=3)
    return split(data, SplitSpec(0.6, 0.2, 0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
