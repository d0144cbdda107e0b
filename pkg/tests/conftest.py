import numpy as np
import pytest
from hypothesis import settings

from gdnet.depth_io import DegradationSpec, SceneSpec, synthesize
from gdnet.model import ModelConfig
from gdnet.training import TrainConfig

settings.register_profile("default", deadline=None)
settings.load_profile("default")

# Small enough that a full train/eval cycle takes well under a second.
TINY_MODEL = ModelConfig(image_channels=(4, 8), depth_channels=8, gge_channels=8, bridge_channels=4,
                         fusion_channels=8, lowrank_dim=4, bins=8)
TINY_TRAIN = TrainConfig(epochs=3, batch_size=2, lr_start=1e-3, lr_end=1e-4)


@pytest.fixture(scope="session")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny")
    deg = DegradationSpec.relative(0.5, 10.0, noise_frac=0.02, bits=6, seed=1)
    return synthesize(root, 4, 2, seed=1, scene=SceneSpec(width=16, height=16), degradation=deg)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# Acceptance lines ("PASS"/"FAIL" per criterion), echoed after the run.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
