import numpy as np
import pytest

from spdh.geometry import DEFAULT_INTRINSICS, PinholeIntrinsics
from spdh.robot import load_chain

# Small camera that keeps full renders fast in tests (same field of view as the default).
SMALL_K = DEFAULT_INTRINSICS.scaled(128, 106)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def chain():
    return load_chain()


@pytest.fixture(scope="session")
def small_k():
    return SMALL_K


@pytest.fixture(scope="session")
def heatmap_k():
    # 384x192 heatmap grid with an isotropic focal length
    return PinholeIntrinsics(365.0, 365.0, 192.0, 96.0, 384, 192)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    from spdh.dataset_io import generate_dataset

    root = tmp_path_factory.mktemp("ds")
    generate_dataset(root, num_sequences=2, frames_per_sequence=3, seed=3, intrinsics=SMALL_K, motions=1)
    return root


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LOG

    if not ACCEPTANCE_LOG:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE_LOG):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d}. {title}: {detail}")
