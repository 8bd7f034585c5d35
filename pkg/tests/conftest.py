import numpy as np
import pytest

from rplusx.geometry import CameraIntrinsics
from rplusx.synthetic import write_scene


@pytest.fixture
def intrinsics():
    return CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene(tmp_path_factory):
    return write_scene(tmp_path_factory.mktemp("scene"), seed=0)


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line straight to the terminal, then assert."""

    def _report(name, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return _report
