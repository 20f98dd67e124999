import sys

import numpy as np
import pytest

from motioncap.skeleton import PARTS, MotionSequence, SkeletonLayout, default_layout


@pytest.fixture
def one_joint_layout() -> SkeletonLayout:
    order = ("Root",) + tuple(p for p in PARTS if p != "Root")
    return SkeletonLayout(tuple(f"j_{p.lower()}" for p in order), order, 0)


@pytest.fixture
def layout():
    return default_layout()


@pytest.fixture
def random_motion():
    def make(n_frames=6, seed=0, layout=None):
        layout = layout or default_layout()
        rng = np.random.default_rng(seed)
        return MotionSequence(rng.normal(size=(n_frames, layout.n_joints, 3)), layout)

    return make


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
