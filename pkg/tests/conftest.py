import numpy as np
import pytest

from lalic.config import ModelConfig
from lalic.weights import init_weights


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_config():
    # small enough that every pipeline stage runs in milliseconds
    return ModelConfig(
        stage_blocks=(1, 1, 1, 1),
        stage_channels=(8, 12, 16),
        latent_channels=24,
        hyper_channels=12,
        chunk_channels=(4, 8, 12),
        context_width=16,
    )


@pytest.fixture(scope="session")
def tiny_store(tiny_config):
    return init_weights(tiny_config, seed=0)


def synthetic_image(h: int, w: int, seed: int = 42) -> np.ndarray:
    """Deterministic RGB test chart: gradients, texture, and mild noise."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w]
    r = 127.5 + 100 * np.sin(yy / 17) * np.cos(xx / 23) + 20 * rng.standard_normal((h, w))
    g = xx * 255.0 / max(w - 1, 1)
    b = (yy + xx) % 256
    return np.stack([r, g, b]).clip(0, 255).astype(np.uint8)


@pytest.fixture(scope="session")
def test_image():
    return synthetic_image(256, 256)
