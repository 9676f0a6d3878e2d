import numpy as np
import pytest

from clothlit.decompose import discriminator_train
from clothlit.imgcore import to_luminance
from clothlit.synth import SynthConfig, gen_scene


@pytest.fixture(scope="session")
def scenes50():
    """The 50 textured 128x128 scenes (seeds 0..49) shared by the
    metric, solver, and corruption acceptance runs."""
    config = SynthConfig(size=128)
    return [gen_scene(seed, config) for seed in range(50)]


@pytest.fixture(scope="session")
def small_scene():
    return gen_scene(3, SynthConfig(size=96))


@pytest.fixture(scope="session")
def shading_model():
    """Small trained discriminator for solver tests."""
    config = SynthConfig(size=64)
    pos = [gen_scene(seed, config).shading for seed in range(40)]
    neg = [to_luminance(gen_scene(seed, config).composite) for seed in range(40, 80)]
    return discriminator_train(pos, neg, seed=7, epochs=400, lr=0.3)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
