"""Pixel fidelity and rate-distortion metrics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionError, InvalidInputError, NoOverlapError

PSNR_CAP_DB = 99.0
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"frame shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)``, capped at 99 dB."""
    err = mse(a, b)
    if err == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak * peak / err))


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, win):
    # separable correlation, keeping only fully covered positions
    half = len(win) // 2
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    return out[half:img.shape[0] - half, half:img.shape[1] - half]


def ssim_components(x: np.ndarray, y: np.ndarray, data_range: float = 1.0):
    """Mean luminance term and mean contrast-structure term of two 2-D images."""
    win = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = _filter_valid(x, win)
    mu_y = _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mu_x * mu_x
    syy = _filter_valid(y * y, win) - mu_y * mu_y
    sxy = _filter_valid(x * y, win) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    return float(lum.mean()), float(cs.mean())


def _downsample(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    img = img[:h, :w]
    return 0.25 * (img[0::2, 0::2] + img[1::2, 0::2] + img[0::2, 1::2] + img[1::2, 1::2])


def ms_ssim_scales(height: int, width: int) -> int:
    """Number of scales whose coarsest level still fits the 11x11 window."""
    scales = 0
    size = min(height, width)
    while scales < len(MS_SSIM_WEIGHTS) and size >= SSIM_WINDOW:
        scales += 1
        size //= 2
    if scales == 0:
        raise DimensionError(f"frames of {height}x{width} are smaller than the SSIM window")
    return scales


def _ms_ssim_channel(x, y, data_range):
    scales = ms_ssim_scales(*x.shape)
    weights = np.array(MS_SSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    value = 1.0
    for j in range(scales):
        lum, cs = ssim_components(x, y, data_range)
        if j == scales - 1:
            value *= max(lum * cs, 0.0) ** weights[j]
        else:
            value *= max(cs, 0.0) ** weights[j]
            x, y = _downsample(x), _downsample(y)
    return value


def ms_ssim(a, b, data_range: float = 1.0) -> float:
    """Multi-scale SSIM of two ``(H, W)`` or ``(H, W, C)`` frames.

    Channels are scored independently and averaged. Frames smaller than
    176 pixels drop the coarsest scales and renormalize the weights.
    Negative contrast-structure terms are clamped to zero.
    """
    a, b = _pair(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    vals = [_ms_ssim_channel(a[..., c], b[..., c], data_range) for c in range(a.shape[-1])]
    return float(min(max(np.mean(vals), 0.0), 1.0))


# ---------------------------------------------------------------------------
# rate-distortion


@dataclass(frozen=True)
class RDPoint:
    rate_kbps: float
    quality: float

    def __post_init__(self):
        if not (math.isfinite(self.rate_kbps) and math.isfinite(self.quality)):
            raise InvalidInputError("RD point must be finite")
        if self.rate_kbps <= 0:
            raise InvalidInputError(f"rate must be > 0, got {self.rate_kbps}")


@dataclass(frozen=True)
class RDCurve:
    points: tuple
    metric_name: str = "psnr"

    def __post_init__(self):
        pts = tuple(p if isinstance(p, RDPoint) else RDPoint(*p) for p in self.points)
        pts = tuple(sorted(pts, key=lambda p: p.rate_kbps))
        object.__setattr__(self, "points", pts)
        if len(pts) < 4:
            raise InvalidInputError(f"an RD curve needs at least 4 points, got {len(pts)}")
        rates = [p.rate_kbps for p in pts]
        if any(r1 <= r0 for r0, r1 in zip(rates, rates[1:])):
            raise InvalidInputError("RD curve rates must be strictly increasing")
        qual = [p.quality for p in pts]
        if any(q1 < q0 for q0, q1 in zip(qual, qual[1:])):
            warnings.warn(f"{self.metric_name} curve quality decreases with rate", stacklevel=2)

    @classmethod
    def from_arrays(cls, rates: Sequence[float], qualities: Sequence[float], metric_name="psnr"):
        return cls(tuple(RDPoint(float(r), float(q)) for r, q in zip(rates, qualities)), metric_name)

    @property
    def rates(self) -> np.ndarray:
        return np.array([p.rate_kbps for p in self.points])

    @property
    def qualities(self) -> np.ndarray:
        return np.array([p.quality for p in self.points])


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Bjontegaard delta rate (percent) of ``test`` relative to ``anchor``.

    Fits a cubic of log10(rate) against quality on each curve and averages
    the difference over the shared quality interval. Negative means the test
    curve needs fewer bits for the same quality.
    """
    qa, qt = anchor.qualities, test.qualities
    lo = max(qa.min(), qt.min())
    hi = min(qa.max(), qt.max())
    if not hi > lo:
        raise NoOverlapError(f"quality ranges do not overlap: [{qa.min()}, {qa.max()}] vs "
                             f"[{qt.min()}, {qt.max()}]")
    pa = np.polyint(np.polyfit(qa, np.log10(anchor.rates), 3))
    pt = np.polyint(np.polyfit(qt, np.log10(test.rates), 3))
    area_a = np.polyval(pa, hi) - np.polyval(pa, lo)
    area_t = np.polyval(pt, hi) - np.polyval(pt, lo)
    delta = (area_t - area_a) / (hi - lo)
    return float(100.0 * (10.0 ** delta - 1.0))
