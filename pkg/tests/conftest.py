import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))  # makes `oracles` importable

from hsifuse.pipeline import PipelineConfig, run_pipeline
from hsifuse.synthetic import SyntheticSpec, generate_synthetic


def acceptance_scene(seed):
    spec = SyntheticSpec(
        height=64, width=64, num_classes=8, bands=40,
        noise_sigma=0.05, seed=seed, cells=20,
    )
    return generate_synthetic(spec)


@pytest.fixture(scope="session")
def acceptance_runs():
    """Five seeded end-to-end runs at the benchmark scale, shared across tests."""
    import time

    runs = []
    t0 = time.monotonic()
    for seed in range(5):
        cube, labels = acceptance_scene(seed)
        result = run_pipeline(PipelineConfig(seed=seed), cube=cube, labels=labels)
        runs.append((seed, cube, labels, result))
    elapsed = time.monotonic() - t0
    return runs, elapsed


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)


@pytest.fixture()
def small_scene():
    spec = SyntheticSpec(
        height=20, width=20, num_classes=3, bands=8,
        noise_sigma=0.03, seed=5, cells=6,
    )
    return generate_synthetic(spec)
