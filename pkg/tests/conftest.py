import os

import numpy as np
import pytest
from hypothesis import settings

from src.config import FrameConfig, Geometry

settings.register_profile("dev", deadline=None, max_examples=25)
if "CI" in os.environ:
    # CI can be slow, so be patient and run more examples
    settings.register_profile("ci", deadline=None, max_examples=200)
    settings.load_profile("ci")
else:
    settings.load_profile("dev")


@pytest.fixture
def reference_cfg() -> FrameConfig:
    return FrameConfig()


@pytest.fixture
def small_cfg() -> FrameConfig:
    """M=4, N=2, N_r=2: small enough for dense-matrix oracles."""
    return FrameConfig(M=4, N=2, N_r=2, N_t=2, L=2, P=1)


@pytest.fixture
def geometry() -> Geometry:
    return Geometry()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
