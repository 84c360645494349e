"""Slide imagery handling: raster containers, grid tiling, tissue selection.

Slides are consumed as pre-exported raster files (PNG or 8-bit RGB TIFF);
vendor slide-container formats are not read. Tiles are fixed-size,
non-overlapping, and carry their pixel origin so downstream reports can
reference slide coordinates. Border remainders that do not fill a whole
tile are discarded.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyInputError, InputError
from .ioutil import atomic_write_bytes

STANDARD_TILE_SIZE = 250

SUPPORTED_EXTENSIONS = {".png", ".tif", ".tiff"}

_PATCH_NAME_RE = re.compile(r"^(?P<slide>.+)_x(?P<x>\d+)_y(?P<y>\d+)$")


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit RGB raster held row-major as a (height, width, 3) uint8 array."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if not isinstance(px, np.ndarray) or px.dtype != np.uint8:
            raise InputError("RasterImage requires a uint8 numpy array")
        if px.ndim != 3 or px.shape[2] != 3:
            raise InputError(f"RasterImage requires shape (h, w, 3), got {px.shape}")
        if px.shape[0] == 0 or px.shape[1] == 0:
            raise EmptyInputError("image has zero width or height")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True, eq=False)
class RasterPatch:
    """A square tile cut from a slide, tagged with its pixel origin.

    The standard pipeline tiles at STANDARD_TILE_SIZE (250 px); the
    container itself only requires square data so that descriptors can be
    exercised on toy images.
    """

    origin_x: int
    origin_y: int
    data: RasterImage
    slide_id: str = ""

    def __post_init__(self):
        if self.origin_x < 0 or self.origin_y < 0:
            raise InputError("patch origin must be nonnegative")
        if self.data.width != self.data.height:
            raise InputError(
                f"patch data must be square, got {self.data.width}x{self.data.height}"
            )


@dataclass(frozen=True)
class TissueFilterConfig:
    """Histogram rule for keeping tissue-bearing patches.

    A patch is kept iff the fraction of near-background pixels
    (luma >= background_luma_threshold) is at most max_background_fraction
    and the luma standard deviation is at least min_luma_stddev. The first
    predicate rejects blank glass; the second rejects flat pen/blur noise.
    """

    background_luma_threshold: float = 220.0
    max_background_fraction: float = 0.75
    min_luma_stddev: float = 8.0

    def __post_init__(self):
        if not 0.0 <= self.background_luma_threshold <= 255.0:
            raise InputError("background_luma_threshold must be in [0, 255]")
        if not 0.0 <= self.max_background_fraction <= 1.0:
            raise InputError("max_background_fraction must be in [0, 1]")
        if self.min_luma_stddev < 0.0:
            raise InputError("min_luma_stddev must be nonnegative")


def pixels_of(source) -> np.ndarray:
    """Return the (h, w, 3) uint8 pixel array behind a patch, image or array."""
    if isinstance(source, RasterPatch):
        return source.data.pixels
    if isinstance(source, RasterImage):
        return source.pixels
    return RasterImage(np.asarray(source)).pixels


def luma(source) -> np.ndarray:
    """Per-pixel luma (0.299 R + 0.587 G + 0.114 B) as float64."""
    px = pixels_of(source).astype(np.float64)
    return 0.299 * px[..., 0] + 0.587 * px[..., 1] + 0.114 * px[..., 2]


def tile_image(image: RasterImage, tile_size: int, slide_id: str = "") -> list[RasterPatch]:
    """Cut an image into a non-overlapping row-major grid of square tiles.

    Border remainders smaller than tile_size are dropped on each axis, so
    the result has exactly floor(w / tile_size) * floor(h / tile_size) tiles.
    """
    if tile_size < 1:
        raise InputError(f"tile_size must be >= 1, got {tile_size}")
    px = pixels_of(image)
    if px.size == 0:
        raise EmptyInputError("cannot tile an empty image")
    n_rows = px.shape[0] // tile_size
    n_cols = px.shape[1] // tile_size
    patches = []
    for row in range(n_rows):
        y0 = row * tile_size
        for col in range(n_cols):
            x0 = col * tile_size
            tile = px[y0 : y0 + tile_size, x0 : x0 + tile_size].copy()
            patches.append(RasterPatch(x0, y0, RasterImage(tile), slide_id))
    return patches


def tissue_filter(patch: RasterPatch, cfg: TissueFilterConfig = TissueFilterConfig()) -> bool:
    """Keep/reject verdict for one patch under the histogram rule."""
    lum = luma(patch)
    background_fraction = float(np.mean(lum >= cfg.background_luma_threshold))
    if background_fraction > cfg.max_background_fraction:
        return False
    return float(lum.std()) >= cfg.min_luma_stddev


def rgb_to_hsv(source) -> np.ndarray:
    """Hexcone RGB -> HSV conversion, H in [0, 360), S and V in [0, 1].

    Hue is 0 for gray pixels (chroma 0).
    """
    px = pixels_of(source).astype(np.float64) / 255.0
    r, g, b = px[..., 0], px[..., 1], px[..., 2]
    v = np.max(px, axis=-1)
    mn = np.min(px, axis=-1)
    c = v - mn
    safe_c = np.where(c == 0.0, 1.0, c)
    h = np.select(
        [c == 0.0, v == r, v == g],
        [0.0, np.mod((g - b) / safe_c, 6.0), (b - r) / safe_c + 2.0],
        default=(r - g) / safe_c + 4.0,
    )
    h = np.mod(60.0 * h, 360.0)
    safe_v = np.where(v == 0.0, 1.0, v)
    s = np.where(v == 0.0, 0.0, c / safe_v)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    """Inverse hexcone conversion back to 8-bit RGB (rounded)."""
    hsv = np.asarray(hsv, dtype=np.float64)
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    c = v * s
    hp = (h / 60.0) % 6.0
    x = c * (1.0 - np.abs(hp % 2.0 - 1.0))
    zeros = np.zeros_like(c)
    sector = np.floor(hp).astype(np.int64) % 6
    r1 = np.choose(sector, [c, x, zeros, zeros, x, c])
    g1 = np.choose(sector, [x, c, c, x, zeros, zeros])
    b1 = np.choose(sector, [zeros, zeros, x, c, c, x])
    m = v - c
    rgb = np.stack([r1 + m, g1 + m, b1 + m], axis=-1)
    return np.clip(np.round(rgb * 255.0), 0, 255).astype(np.uint8)


def load_image(path) -> RasterImage:
    """Load a PNG or 8-bit RGB TIFF from disk."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"image not found: {path}")
    if path.suffix.lower() not in SUPPORTED_EXTENSIONS:
        raise InputError(f"unsupported image format: {path.name}")
    try:
        with Image.open(path) as im:
            if im.mode != "RGB":
                raise InputError(f"{path.name}: expected 8-bit RGB, got mode {im.mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except InputError:
        raise
    except Exception as exc:
        raise InputError(f"cannot read {path}: {exc}") from exc
    return RasterImage(arr)


def patch_filename(patch: RasterPatch) -> str:
    return f"{patch.slide_id}_x{patch.origin_x}_y{patch.origin_y}.png"


def parse_patch_filename(name: str) -> tuple[str, int, int]:
    """Recover (slide_id, origin_x, origin_y) from an exported patch name.

    Names that do not follow the export convention map to origin (0, 0)
    with the whole stem as slide id.
    """
    stem = Path(name).stem
    match = _PATCH_NAME_RE.match(stem)
    if match is None:
        return stem, 0, 0
    return match.group("slide"), int(match.group("x")), int(match.group("y"))


def save_patch_png(patch: RasterPatch, out_dir) -> Path:
    """Write one patch as PNG under its canonical name; returns the path."""
    out_path = Path(out_dir) / patch_filename(patch)
    buf = io.BytesIO()
    Image.fromarray(patch.data.pixels).save(buf, format="PNG")
    atomic_write_bytes(out_path, buf.getvalue())
    return out_path


def load_patch(path, slide_id: str | None = None) -> RasterPatch:
    """Load a single patch file, recovering origin from its filename."""
    parsed_slide, ox, oy = parse_patch_filename(Path(path).name)
    image = load_image(path)
    return RasterPatch(ox, oy, image, slide_id if slide_id is not None else parsed_slide)
