"""Image quality metrics: MSE, PSNR, and a uniform-window SSIM.

SSIM uses an 8x8 uniform window at stride 1 with population statistics, on the
luma channel, C1 = 0.01^2 and C2 = 0.03^2 on the [0,1] scale. Window sums run
on float64 integral images, so ssim(x, x) is exactly 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imagecore import Image, to_grayscale

SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
PSNR_TEXT_CAP = 99.0


@dataclass(frozen=True)
class MetricReport:
    mse: float
    psnr: float
    ssim: float


def _check_dims(a: Image, b: Image):
    if a.data.shape != b.data.shape:
        raise ValueError(f"image dims differ: {a.data.shape} vs {b.data.shape}")


def mse_metric(a: Image, b: Image) -> float:
    _check_dims(a, b)
    d = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(d * d))


def psnr_from_mse(mse: float) -> float:
    if mse < 0:
        raise ValueError("mse must be >= 0")
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def psnr(a: Image, b: Image) -> float:
    return psnr_from_mse(mse_metric(a, b))


def format_psnr(value: float) -> float:
    """Text-output form: the zero-MSE sentinel is capped at 99 dB."""
    return min(value, PSNR_TEXT_CAP)


def _box_sums(x: np.ndarray, k: int) -> np.ndarray:
    """Sum over every k x k window (stride 1) via an integral image."""
    s = np.zeros((x.shape[0] + 1, x.shape[1] + 1), dtype=np.float64)
    np.cumsum(np.cumsum(x, axis=0), axis=1, out=s[1:, 1:])
    return s[k:, k:] - s[:-k, k:] - s[k:, :-k] + s[:-k, :-k]


def ssim(a: Image, b: Image) -> float:
    _check_dims(a, b)
    ga = to_grayscale(a).data[:, :, 0].astype(np.float64)
    gb = to_grayscale(b).data[:, :, 0].astype(np.float64)
    k = SSIM_WINDOW
    if ga.shape[0] < k or ga.shape[1] < k:
        raise ValueError(f"image smaller than the {k}x{k} ssim window")
    n = float(k * k)
    mua = _box_sums(ga, k) / n
    mub = _box_sums(gb, k) / n
    # population second moments
    saa = _box_sums(ga * ga, k) / n - mua * mua
    sbb = _box_sums(gb * gb, k) / n - mub * mub
    sab = _box_sums(ga * gb, k) / n - mua * mub
    num = (2.0 * mua * mub + SSIM_C1) * (2.0 * sab + SSIM_C2)
    den = (mua * mua + mub * mub + SSIM_C1) * (saa + sbb + SSIM_C2)
    return float(np.mean(num / den))


def report(a: Image, b: Image) -> MetricReport:
    m = mse_metric(a, b)
    return MetricReport(mse=m, psnr=psnr_from_mse(m), ssim=ssim(a, b))
