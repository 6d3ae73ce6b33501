from pathlib import Path

import numpy as np
import pytest

from featbench.imgcore import GrayImage, load_pgm

FIXTURES = Path(__file__).parent / "fixtures"

# texture-rich reference image used by the benchmark-level checks
REFERENCE = FIXTURES / "grass.pgm"
# low-texture natural image, a second data point for detector-level checks
CAMERA = FIXTURES / "camera.pgm"


@pytest.fixture(scope="session")
def reference_image() -> GrayImage:
    return load_pgm(REFERENCE)


@pytest.fixture(scope="session")
def camera_image() -> GrayImage:
    return load_pgm(CAMERA)


@pytest.fixture(scope="session")
def camera_crop(camera_image) -> GrayImage:
    """A 256x256 centre crop, large enough for every detector and quick to process."""
    return GrayImage(camera_image.pixels[128:384, 128:384])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def blob_image(size=64, sigma=4.0, amplitude=200.0, background=20.0, center=None):
    c = (size - 1) / 2.0 if center is None else center
    yy, xx = np.mgrid[0:size, 0:size]
    r2 = (xx - c) ** 2 + (yy - c) ** 2
    return GrayImage(background + amplitude * np.exp(-r2 / (2 * sigma * sigma)))


def constant_image(h, w, value=7.0):
    return GrayImage(np.full((h, w), value))


@pytest.fixture(scope="session")
def reference_suite(reference_image):
    """One full suite run (single timing repetition) on the reference image."""
    from featbench.bench import SuiteConfig, run_suite

    cfg = SuiteConfig(repetitions=1)
    return cfg, run_suite(cfg, reference_image)
