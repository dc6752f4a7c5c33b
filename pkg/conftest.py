# conftest.py
import numpy as np
import pytest
import torch
from PIL import Image

from models.architecture import Architecture
from utils import config as settings
from utils.console_logger import LogLevel, logger


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale experiments (training runs, long fits)")


@pytest.fixture(autouse=True)
def seeded():
    """Every test starts from the same global RNG state and default settings."""
    torch.manual_seed(0)
    np.random.seed(0)
    logger.set_level(LogLevel.WARNING)
    saved = {k: v for k, v in vars(settings).items() if k.isupper()}
    yield
    for key, value in saved.items():
        setattr(settings, key, value)
    logger.close_log_file()
    torch.use_deterministic_algorithms(False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_arch():
    """Factory for small architectures (fast forward passes)."""

    def make(kind="hyperprior", n=4, m=6, lmbda=0.01, distortion="mse"):
        return Architecture(n_filters=n, m_filters=m, lmbda=lmbda, distortion=distortion, model_kind=kind)

    return make


def smooth_image(rng, height, width):
    """Low-frequency RGB test image (uint8), closer to a photograph than white noise."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    channels = []
    for _ in range(3):
        fx, fy, phase = rng.uniform(0.02, 0.15, size=2).tolist() + [rng.uniform(0, 6.28)]
        channels.append(0.5 + 0.35 * np.sin(fx * xx + phase) * np.cos(fy * yy))
    pixels = np.stack(channels, axis=-1) + 0.03 * rng.standard_normal((height, width, 3))
    return np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8)


@pytest.fixture
def image_dir(tmp_path, rng):
    """Directory of six 96x96 PNG images."""
    directory = tmp_path / "images"
    directory.mkdir()
    for i in range(6):
        Image.fromarray(smooth_image(rng, 96, 96)).save(directory / f"img{i:02d}.png")
    return directory


@pytest.fixture
def make_image():
    return smooth_image
