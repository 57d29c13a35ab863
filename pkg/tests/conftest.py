import numpy as np
import pytest

from app.imaging import ImageBuf
from app.network import init_model, zero_model
from app.sampler import synth_image
from app.schemas import ArchConfig
from app.utils import rng_for


@pytest.fixture(scope="session")
def arch():
    return ArchConfig()


@pytest.fixture(scope="session")
def scene():
    """One 178x218 synthetic labeled scene."""
    return synth_image(3)


@pytest.fixture
def model(arch):
    return init_model(arch, rng_for(0, "init"))


@pytest.fixture
def blank_model(arch):
    return zero_model(arch)


@pytest.fixture
def small_image():
    """60x60 RGB noise image: 26x26 valid centers for the 35x35 patch."""
    rng = np.random.default_rng(11)
    return ImageBuf(rng.integers(0, 256, size=(60, 60, 3), dtype=np.uint8))


@pytest.fixture
def split_image():
    """Black left half, white right half (40 wide, 30 tall)."""
    data = np.zeros((30, 40), dtype=np.uint8)
    data[:, 20:] = 255
    return ImageBuf(data)
