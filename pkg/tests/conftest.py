import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from her2score.imaging import RasterImage, RasterPatch


def make_patch(pixels: np.ndarray, ox: int = 0, oy: int = 0, slide_id: str = "test") -> RasterPatch:
    return RasterPatch(ox, oy, RasterImage(np.ascontiguousarray(pixels, dtype=np.uint8)), slide_id)


def solid_patch(rgb, size: int = 8, **kwargs) -> RasterPatch:
    px = np.zeros((size, size, 3), dtype=np.uint8)
    px[:, :] = rgb
    return make_patch(px, **kwargs)


def random_patch(rng: np.random.Generator, size: int = 16, low: int = 0, high: int = 256, **kwargs) -> RasterPatch:
    return make_patch(rng.integers(low, high, size=(size, size, 3), dtype=np.uint8), **kwargs)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
