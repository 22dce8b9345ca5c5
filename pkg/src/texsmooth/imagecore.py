"""Image and tensor containers, bilinear resampling, and color utilities.

Images are HWC float32 rasters with values in [0, 1]; network tensors are
NCHW float32/float64 numpy arrays. Everything here is a pure function over
immutable inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LUMA_WEIGHTS = (0.299, 0.587, 0.114)


@dataclass(frozen=True)
class Image:
    """Single image: (height, width, channels) float32 in [0, 1], channels 1 or 3."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"image data must be HxWxC, got shape {arr.shape}")
        h, w, c = arr.shape
        if h < 1 or w < 1:
            raise ValueError(f"image dims must be >= 1, got {h}x{w}")
        if c not in (1, 3):
            raise ValueError(f"image must have 1 or 3 channels, got {c}")
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        if not np.isfinite(arr).all():
            raise ValueError("image contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image values must lie in [0, 1]")
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def clamp01(arr: np.ndarray) -> np.ndarray:
    """Explicit clamp to [0, 1]; the only sanctioned way to force image range."""
    return np.clip(arr, 0.0, 1.0)


def bilinear_weights(in_size: int, out_size: int) -> np.ndarray:
    """Row-stochastic (out_size, in_size) interpolation matrix.

    Half-pixel-center convention: output center o samples input coordinate
    (o + 0.5) * in/out - 0.5, clamped to the valid range. Each row holds the
    two adjacent-neighbor weights (convex, summing to 1).
    """
    if out_size < 1 or in_size < 1:
        raise ValueError("sizes must be >= 1")
    mat = np.zeros((out_size, in_size), dtype=np.float64)
    if in_size == 1:
        mat[:, 0] = 1.0
        return mat
    scale = in_size / out_size
    for o in range(out_size):
        s = (o + 0.5) * scale - 0.5
        s = min(max(s, 0.0), in_size - 1.0)
        i0 = min(int(np.floor(s)), in_size - 2)
        f = s - i0
        mat[o, i0] = 1.0 - f
        mat[o, i0 + 1] += f
    return mat


def resize_bilinear(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear resample to (out_h, out_w) with half-pixel centers.

    Output values are clipped to the input's global [min, max] so the convex
    combination bound holds exactly despite float rounding.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target dims must be >= 1, got {out_h}x{out_w}")
    src = img.data.astype(np.float64)
    rh = bilinear_weights(img.height, out_h)
    rw = bilinear_weights(img.width, out_w)
    # out[y, x, c] = sum_ij rh[y, i] * src[i, j, c] * rw[x, j]
    out = np.einsum("oi,ijc,pj->opc", rh, src, rw, optimize=True)
    out = out.astype(np.float32)
    out = np.clip(out, img.data.min(), img.data.max())
    return Image(out)


def to_grayscale(img: Image) -> Image:
    """Rec.601 luma; 1-channel images pass through unchanged."""
    if img.channels == 1:
        return img
    luma = img.data.astype(np.float64) @ np.asarray(LUMA_WEIGHTS, dtype=np.float64)
    return Image(clamp01(luma.astype(np.float32))[..., None])


def crop(img: Image, y0: int, x0: int, h: int, w: int) -> Image:
    if y0 < 0 or x0 < 0 or h < 1 or w < 1 or y0 + h > img.height or x0 + w > img.width:
        raise ValueError(f"crop ({y0},{x0},{h},{w}) outside {img.height}x{img.width}")
    return Image(img.data[y0 : y0 + h, x0 : x0 + w].copy())


def image_to_tensor(imgs: list[Image]) -> np.ndarray:
    """Stack images into an NCHW float32 tensor."""
    if not imgs:
        raise ValueError("empty image list")
    dims = {(im.height, im.width, im.channels) for im in imgs}
    if len(dims) != 1:
        raise ValueError(f"images disagree on dims/channels: {sorted(dims)}")
    return np.stack([im.data.transpose(2, 0, 1) for im in imgs]).astype(np.float32)


def tensor_to_image(t: np.ndarray, index: int) -> Image:
    """Extract batch element `index` as an Image (inverse of image_to_tensor)."""
    if t.ndim != 4:
        raise ValueError(f"tensor must be NCHW, got shape {t.shape}")
    if not 0 <= index < t.shape[0]:
        raise ValueError(f"index {index} out of range for batch {t.shape[0]}")
    return Image(np.asarray(t[index]).transpose(1, 2, 0).astype(np.float32))


def check_tensor(t: np.ndarray, name: str = "tensor") -> np.ndarray:
    """Validate the NCHW/finite contract at module boundaries."""
    t = np.asarray(t)
    if t.ndim != 4:
        raise ValueError(f"{name} must be NCHW, got shape {t.shape}")
    if not np.isfinite(t).all():
        raise ValueError(f"{name} contains non-finite values")
    return t
