"""Patch descriptors: color histograms, channel statistics, LBP and PFTAS.

Every descriptor is a pure function of the pixel data. Histogram values
live in [0, 1] by construction and the six mean/std entries are scaled to
[0, 1] (hue divided by 360), so no fitted scaler is needed downstream.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputError, InsufficientSupportError
from .imaging import pixels_of, rgb_to_hsv

LBP_BINS = 59  # 58 uniform 8-bit patterns plus one catch-all
PFTAS_DIM = 162  # 3 channels x 3 thresholds x 2 polarities x 9 neighbor counts


class DescriptorId(str, Enum):
    HSV_HIST = "hsv"
    HSV_MS = "hsv_ms"
    HSV_RGB = "hsv_rgb"
    LBP = "lbp"
    PFTAS = "pftas"


@dataclass(frozen=True)
class HistogramConfig:
    bins_per_channel: int = 32
    normalize: bool = True

    def __post_init__(self):
        if self.bins_per_channel < 2:
            raise InputError("bins_per_channel must be >= 2")


@dataclass(frozen=True)
class LbpParams:
    radius: float = 1.0
    neighbors: int = 8

    def __post_init__(self):
        if self.radius <= 0:
            raise InputError("LBP radius must be positive")
        if self.neighbors != 8:
            raise InputError("only the 8-neighbor LBP variant is supported")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """Dense descriptor output; descriptor is None for sub-operation outputs."""

    descriptor: DescriptorId | None
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise InputError("feature vector contains non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.values
        return self.values.astype(dtype)


def descriptor_dim(descriptor: DescriptorId, cfg: HistogramConfig = HistogramConfig()) -> int:
    """Output dimensionality contract for each descriptor family."""
    bins = cfg.bins_per_channel
    return {
        DescriptorId.HSV_HIST: 3 * bins,
        DescriptorId.HSV_MS: 3 * bins + 6,
        DescriptorId.HSV_RGB: 6 * bins,
        DescriptorId.LBP: LBP_BINS,
        DescriptorId.PFTAS: PFTAS_DIM,
    }[descriptor]


def _channel_histograms(n_channels: int, bin_indices: np.ndarray, cfg: HistogramConfig) -> np.ndarray:
    n_pixels = bin_indices.shape[0]
    hists = []
    for c in range(n_channels):
        counts = np.bincount(bin_indices[:, c], minlength=cfg.bins_per_channel).astype(np.float64)
        if cfg.normalize:
            counts /= n_pixels
        hists.append(counts)
    return np.concatenate(hists)


def rgb_histogram(patch, cfg: HistogramConfig = HistogramConfig()) -> FeatureVector:
    """Equal-width per-channel histograms over [0, 255], concatenated R|G|B."""
    px = pixels_of(patch).reshape(-1, 3).astype(np.int64)
    idx = (px * cfg.bins_per_channel) // 256
    return FeatureVector(None, _channel_histograms(3, idx, cfg))


def hsv_histogram(patch, cfg: HistogramConfig = HistogramConfig()) -> FeatureVector:
    """Per-channel histograms over H in [0, 360) and S, V in [0, 1]."""
    hsv = rgb_to_hsv(patch).reshape(-1, 3)
    bins = cfg.bins_per_channel
    idx = np.empty(hsv.shape, dtype=np.int64)
    idx[:, 0] = np.minimum((hsv[:, 0] / 360.0 * bins).astype(np.int64), bins - 1)
    idx[:, 1] = np.minimum((hsv[:, 1] * bins).astype(np.int64), bins - 1)
    idx[:, 2] = np.minimum((hsv[:, 2] * bins).astype(np.int64), bins - 1)
    return FeatureVector(DescriptorId.HSV_HIST, _channel_histograms(3, idx, cfg))


def channel_mean_std(patch) -> np.ndarray:
    """(mean, population std) pairs for H, S, V; hue scaled by 1/360."""
    hsv = rgb_to_hsv(patch).reshape(-1, 3)
    hsv = hsv / np.array([360.0, 1.0, 1.0])
    means = hsv.mean(axis=0)
    stds = hsv.std(axis=0)
    return np.array(
        [means[0], stds[0], means[1], stds[1], means[2], stds[2]], dtype=np.float64
    )


def descriptor_hsv_ms(patch, cfg: HistogramConfig = HistogramConfig()) -> FeatureVector:
    """HSV histograms followed by the six channel mean/std entries."""
    hist = hsv_histogram(patch, cfg)
    return FeatureVector(DescriptorId.HSV_MS, np.concatenate([hist.values, channel_mean_std(patch)]))


def descriptor_hsv_rgb(patch, cfg: HistogramConfig = HistogramConfig()) -> FeatureVector:
    """HSV histograms followed by RGB histograms."""
    return FeatureVector(
        DescriptorId.HSV_RGB,
        np.concatenate([hsv_histogram(patch, cfg).values, rgb_histogram(patch, cfg).values]),
    )


def _uniform_bin_table() -> np.ndarray:
    """Map each 8-bit code to its histogram bin.

    Codes with at most two circular 0/1 transitions are 'uniform'; they get
    bins 0..57 in ascending code order, everything else falls into bin 58.
    """
    table = np.full(256, LBP_BINS - 1, dtype=np.int64)
    next_bin = 0
    for code in range(256):
        rotated = ((code >> 1) | ((code & 1) << 7)) & 0xFF
        transitions = bin(code ^ rotated).count("1")
        if transitions <= 2:
            table[code] = next_bin
            next_bin += 1
    assert next_bin == 58
    return table


_LBP_TABLE = _uniform_bin_table()


def _lbp_codes(gray: np.ndarray, radius: float) -> np.ndarray:
    """8-bit neighbor codes for every interior pixel of a grayscale image.

    Neighbor k sits at angle k*45 degrees counter-clockwise from +x at the
    given radius; fractional positions are sampled bilinearly. The
    comparison is evaluated on interpolated differences (neighbor - center),
    which makes it exact under a constant shift of all pixels.
    """
    margin = int(math.ceil(radius))
    h, w = gray.shape
    if h < 2 * margin + 1 or w < 2 * margin + 1:
        raise InsufficientSupportError(
            f"LBP radius {radius} needs at least {2 * margin + 1}x{2 * margin + 1} pixels"
        )
    center = gray[margin : h - margin, margin : w - margin]
    ih, iw = center.shape
    codes = np.zeros(center.shape, dtype=np.int64)
    for k in range(8):
        angle = math.radians(45.0 * k)
        dx = radius * math.cos(angle)
        dy = -radius * math.sin(angle)  # rows grow downward
        # snap near-integer offsets so axis neighbors compare exactly
        if abs(dx - round(dx)) < 1e-9:
            dx = float(round(dx))
        if abs(dy - round(dy)) < 1e-9:
            dy = float(round(dy))
        r0 = math.floor(dy)
        c0 = math.floor(dx)
        fy = dy - r0
        fx = dx - c0

        def block(dr, dc):
            top = margin + r0 + dr
            left = margin + c0 + dc
            return gray[top : top + ih, left : left + iw]

        if fy == 0.0 and fx == 0.0:
            diff = block(0, 0) - center
        else:
            d00 = block(0, 0) - center
            d01 = block(0, 1) - center
            d10 = block(1, 0) - center
            d11 = block(1, 1) - center
            diff = (
                (1.0 - fy) * (1.0 - fx) * d00
                + (1.0 - fy) * fx * d01
                + fy * (1.0 - fx) * d10
                + fy * fx * d11
            )
        codes |= (diff >= 0.0).astype(np.int64) << k
    return codes


def lbp_descriptor(patch, params: LbpParams = LbpParams()) -> FeatureVector:
    """59-bin histogram of uniform local binary patterns on the luma image."""
    px = pixels_of(patch).astype(np.float64)
    # integer-scaled luma keeps neighbor/center differences exact
    gray = 299.0 * px[..., 0] + 587.0 * px[..., 1] + 114.0 * px[..., 2]
    codes = _lbp_codes(gray, params.radius)
    hist = np.bincount(_LBP_TABLE[codes].ravel(), minlength=LBP_BINS).astype(np.float64)
    return FeatureVector(DescriptorId.LBP, hist / codes.size)


def otsu_threshold(channel: np.ndarray) -> int:
    """Otsu's threshold on one 8-bit channel (maximizes between-class variance).

    Ties resolve to the smallest threshold; a constant channel returns its
    single value, leaving the above-threshold set empty.
    """
    hist = np.bincount(channel.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    w0 = np.cumsum(hist)
    moment = np.cumsum(hist * np.arange(256))
    valid = (w0 > 0) & (w0 < total)
    if not valid.any():
        return int(channel.ravel()[0])
    w1 = total - w0
    mu0 = np.where(w0 > 0, moment / np.where(w0 > 0, w0, 1.0), 0.0)
    mu1 = np.where(w1 > 0, (moment[-1] - moment) / np.where(w1 > 0, w1, 1.0), 0.0)
    between = np.where(valid, w0 * w1 * (mu0 - mu1) ** 2, -1.0)
    return int(np.argmax(between))


def _adjacency_histogram(mask: np.ndarray) -> np.ndarray:
    """9-bin histogram of set 8-neighbor counts over set pixels, sum 1.

    Pixels outside the image count as unset; an empty mask yields zeros.
    """
    n_set = int(mask.sum())
    if n_set == 0:
        return np.zeros(9, dtype=np.float64)
    padded = np.pad(mask.astype(np.int64), 1)
    neighbor_sum = (
        padded[:-2, :-2] + padded[:-2, 1:-1] + padded[:-2, 2:]
        + padded[1:-1, :-2] + padded[1:-1, 2:]
        + padded[2:, :-2] + padded[2:, 1:-1] + padded[2:, 2:]
    )
    counts = np.bincount(neighbor_sum[mask], minlength=9).astype(np.float64)
    return counts / n_set


def _above_threshold_stats(channel: np.ndarray, threshold: int) -> tuple[float, float]:
    """Mean and population std of pixels strictly above the threshold.

    Computed from exact integer sums so independent implementations agree
    bit-for-bit; an empty set maps to (0, 0).
    """
    above = channel[channel > threshold]
    if above.size == 0:
        return 0.0, 0.0
    n = above.size
    s1 = int(above.sum())
    s2 = int((above.astype(np.int64) ** 2).sum())
    mean = s1 / n
    variance = max(0.0, s2 / n - mean * mean)
    return mean, math.sqrt(variance)


def pftas_descriptor(patch) -> FeatureVector:
    """Parameter-free threshold adjacency statistics over R, G, B (162 values).

    Per channel: Otsu threshold T, then mean/std (mu, sigma) of pixels above
    T define three masks (mu-sigma <= p <= mu+sigma, p >= mu-sigma, p >= mu).
    Each mask and its complement contributes a 9-bin set-neighbor-count
    histogram; blocks are concatenated as mask/complement pairs per channel.
    """
    px = pixels_of(patch).astype(np.int64)
    blocks = []
    for c in range(3):
        channel = px[..., c]
        threshold = otsu_threshold(channel)
        mean, std = _above_threshold_stats(channel, threshold)
        masks = (
            (channel >= mean - std) & (channel <= mean + std),
            channel >= mean - std,
            channel >= mean,
        )
        for mask in masks:
            blocks.append(_adjacency_histogram(mask))
            blocks.append(_adjacency_histogram(~mask))
    return FeatureVector(DescriptorId.PFTAS, np.concatenate(blocks))


def extract_feature(
    patch,
    descriptor: DescriptorId,
    cfg: HistogramConfig = HistogramConfig(),
    lbp: LbpParams = LbpParams(),
) -> FeatureVector:
    """Compute one descriptor family on a patch."""
    descriptor = DescriptorId(descriptor)
    if descriptor == DescriptorId.HSV_HIST:
        return hsv_histogram(patch, cfg)
    if descriptor == DescriptorId.HSV_MS:
        return descriptor_hsv_ms(patch, cfg)
    if descriptor == DescriptorId.HSV_RGB:
        return descriptor_hsv_rgb(patch, cfg)
    if descriptor == DescriptorId.LBP:
        return lbp_descriptor(patch, lbp)
    return pftas_descriptor(patch)


def features_to_csv(rows) -> str:
    """Render (slide_id, origin_x, origin_y, label, FeatureVector) rows as CSV."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    max_dim = 0
    materialized = list(rows)
    for _, _, _, _, vec in materialized:
        max_dim = max(max_dim, vec.dim)
    writer.writerow(
        ["slide_id", "origin_x", "origin_y", "label"] + [f"f{i}" for i in range(max_dim)]
    )
    for slide_id, ox, oy, label, vec in materialized:
        writer.writerow([slide_id, ox, oy, label] + [repr(v) for v in vec.values.tolist()])
    return buf.getvalue()
