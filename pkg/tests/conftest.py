import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.function_scoped_fixture, HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(int(os.environ.get("PANTCR_THREADS", "1")))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def scene_128():
    from pantcr.scenes import generate_scene

    return generate_scene(11, 128, 128)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two 128x128 scenes tiled into 4 train, 2 val and 2 reduced-test patches."""
    from pantcr.dataset import SynthConfig, load_manifest, synth_dataset
    from pantcr.scenes import generate_scene

    out = tmp_path_factory.mktemp("small_dataset")
    scenes = [generate_scene(s, 128, 128) for s in (3, 4)]
    cfg = SynthConfig(train_size=32, val_size=32, reduced_size=64, seed=5)
    synth_dataset(scenes, {"train": 4, "val": 2, "test_reduced": 2}, cfg, out)
    return load_manifest(out)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
