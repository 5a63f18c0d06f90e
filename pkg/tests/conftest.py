from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from pda.simulator import default_world_config, sample_world


@pytest.fixture(scope="session")
def small_world():
    """Shrunk default-geometry world for fast pipeline-level tests."""
    cfg = replace(
        default_world_config(seed=42),
        n_reference=80,
        n_calibration=60,
        n_test_real=40,
        n_test_known_fake=40,
        n_test_per_unknown=40,
    )
    return sample_world(cfg)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
