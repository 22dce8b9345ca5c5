"""Synthetic training-sample generation.

Texture patterns live on a fixed 100x100 canvas. A pattern is warped by one
randomly chosen geometric transform, binarized into a tile mask, tiled over a
structure-only image, and blended in with per-pixel random contrast. Ground
truths (texture confidence, binary mask, binary edge map) fall out exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import Image, clamp01, resize_bilinear, to_grayscale

CANVAS = 100
FREEFORM_SIZES = (3, 5, 7, 9, 11)
TRANSFORM_KINDS = ("scale", "shear_x", "shear_y", "rotate", "freeform")


class DegeneratePatternError(ValueError):
    """Raised when a texture source has no usable variation."""


@dataclass(frozen=True)
class TexturePattern:
    canvas: np.ndarray  # (h, w) float32 magnitudes in [0,1]

    def __post_init__(self):
        c = self.canvas
        if c.ndim != 2 or c.dtype != np.float32:
            raise ValueError("pattern canvas must be 2-d float32")
        if c.min() < 0.0 or c.max() > 1.0:
            raise ValueError("pattern values must lie in [0,1]")


@dataclass(frozen=True)
class TransformParams:
    kind: str
    s1: float = 0.0
    s2: float = 0.0
    k: float = 0.0
    theta: float = 0.0
    f: int = 0
    seed: int = 0

    def to_json(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "scale":
            out.update(s1=self.s1, s2=self.s2)
        elif self.kind in ("shear_x", "shear_y"):
            out.update(k=self.k)
        elif self.kind == "rotate":
            out.update(theta=self.theta)
        elif self.kind == "freeform":
            out.update(f=self.f, seed=self.seed)
        return out


@dataclass(frozen=True)
class BlendConfig:
    kappa: float = 0.75
    mask_threshold: float = 0.1
    gt_mode: str = "remapped"

    def __post_init__(self):
        if not 0.0 < self.kappa < 1.0:
            raise ValueError(f"kappa must be in (0,1), got {self.kappa}")
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError(f"mask_threshold must be in (0,1), got {self.mask_threshold}")
        if self.gt_mode not in ("literal", "remapped"):
            raise ValueError(f"unknown gt_mode {self.gt_mode!r}")


@dataclass(frozen=True)
class GeneratedSample:
    input: Image
    structure_only: Image
    texture_gt: Image
    texture_mask: Image
    structure_map: Image
    seed: int
    transform: TransformParams
    pattern_index: int


def extract_texture_pattern(texture_img: Image, mask_threshold: float = 0.1) -> TexturePattern:
    """Background-subtraction pattern extractor.

    Median is the background estimate (texture sources have simple backgrounds),
    |value - median| the texture magnitude, max-normalized, small values zeroed.
    """
    img = texture_img
    if img.height != CANVAS or img.width != CANVAS:
        img = resize_bilinear(img, CANVAS, CANVAS)
    g = to_grayscale(img).data[:, :, 0].astype(np.float64)
    mag = np.abs(g - np.median(g))
    peak = mag.max()
    if peak == 0.0:
        raise DegeneratePatternError("texture image is constant; no pattern to extract")
    mag /= peak
    mag[mag < mask_threshold] = 0.0
    return TexturePattern(mag.astype(np.float32))


def _warp(canvas: np.ndarray, inverse_xy) -> np.ndarray:
    """Resample canvas at inverse-mapped output coordinates, wrapping periodically."""
    h, w = canvas.shape
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    sx, sy = inverse_xy(xs, ys)
    sx = np.mod(sx, w)
    sy = np.mod(sy, h)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    fx = sx - x0
    fy = sy - y0
    x0 %= w
    y0 %= h
    x1 = (x0 + 1) % w
    y1 = (y0 + 1) % h
    c = canvas.astype(np.float64)
    top = c[y0, x0] * (1.0 - fx) + c[y0, x1] * fx
    bot = c[y1, x0] * (1.0 - fx) + c[y1, x1] * fx
    out = top * (1.0 - fy) + bot * fy
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def transform_scale(p: TexturePattern, s1: float, s2: float, _check: bool = True) -> TexturePattern:
    if _check and not (1.0 < s1 <= 3.0 and 1.0 < s2 <= 3.0):
        raise ValueError(f"scale factors must be in (1,3], got {s1}, {s2}")
    return TexturePattern(_warp(p.canvas, lambda x, y: (x / s1, y / s2)))


def transform_shear(p: TexturePattern, k: float, axis: str) -> TexturePattern:
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"shear factor must be in [0,1], got {k}")
    if axis == "x":
        # forward x' = x + k*y, so sample x = x' - k*y'
        return TexturePattern(_warp(p.canvas, lambda x, y: (x - k * y, y)))
    if axis == "y":
        return TexturePattern(_warp(p.canvas, lambda x, y: (x, y - k * x)))
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def transform_rotate(p: TexturePattern, theta: float) -> TexturePattern:
    if not -np.pi <= theta <= np.pi:
        raise ValueError(f"theta must be in [-pi,pi], got {theta}")
    h, w = p.canvas.shape
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    ct, st = np.cos(theta), np.sin(theta)

    def inv(x, y):
        # forward is [[ct, st], [-st, ct]] about the center; inverse is its transpose
        xo = x - cx
        yo = y - cy
        return ct * xo - st * yo + cx, st * xo + ct * yo + cy

    return TexturePattern(_warp(p.canvas, inv))


def freeform_distort(p: TexturePattern, f: int, seed: int) -> TexturePattern:
    if f not in FREEFORM_SIZES:
        raise ValueError(f"block size must be one of {FREEFORM_SIZES}, got {f}")
    rng = np.random.default_rng(seed)
    out = p.canvas.copy()
    h, w = out.shape
    for y0 in range(0, h, f):
        for x0 in range(0, w, f):
            block = out[y0 : y0 + f, x0 : x0 + f]
            vals = block.ravel()  # copy when the slice is non-contiguous
            block[...] = vals[rng.permutation(vals.size)].reshape(block.shape)
    return TexturePattern(out)


def random_transform(p: TexturePattern, rng: np.random.Generator):
    """Pick a transform kind and in-range parameters uniformly; apply it."""
    kind = TRANSFORM_KINDS[rng.integers(len(TRANSFORM_KINDS))]
    if kind == "scale":
        s1 = 3.0 - 2.0 * rng.random()  # (1,3]
        s2 = 3.0 - 2.0 * rng.random()
        return transform_scale(p, s1, s2), TransformParams("scale", s1=s1, s2=s2)
    if kind in ("shear_x", "shear_y"):
        k = float(rng.random())
        return transform_shear(p, k, kind[-1]), TransformParams(kind, k=k)
    if kind == "rotate":
        theta = float(rng.uniform(-np.pi, np.pi))
        return transform_rotate(p, theta), TransformParams("rotate", theta=theta)
    seed = int(rng.integers(np.iinfo(np.int64).max))
    f = int(FREEFORM_SIZES[rng.integers(len(FREEFORM_SIZES))])
    return freeform_distort(p, f, seed), TransformParams("freeform", f=f, seed=seed)


def blend(s: Image, p: TexturePattern, cfg: BlendConfig, rng: np.random.Generator):
    """Tile the binarized pattern over s and draw texture values on the mask.

    Where the mask is set, each channel is drawn uniformly from the closed
    interval [kappa*(1-S), 1-S]; elsewhere the input is a bit-exact copy of S.
    """
    if s.channels != 3:
        raise ValueError("structure image must have 3 channels")
    h, w = s.height, s.width
    th, tw = p.canvas.shape
    if h < th or w < tw:
        raise ValueError(f"image {h}x{w} smaller than one {th}x{tw} tile")
    tile = (p.canvas >= cfg.mask_threshold).astype(np.float32)
    reps = (-(-h // th), -(-w // tw))
    mask = np.tile(tile, reps)[:h, :w]

    sv = s.data
    low = (np.float32(cfg.kappa) * (np.float32(1.0) - sv)).astype(np.float32)
    high = (np.float32(1.0) - sv).astype(np.float32)
    u = rng.random(sv.shape, dtype=np.float64)
    draw = low.astype(np.float64) + u * (high.astype(np.float64) - low.astype(np.float64))
    # f64 value sits in [low, high] whose endpoints are f32-exact, so the cast stays inside
    draw32 = np.clip(draw.astype(np.float32), low, high)
    on = mask[:, :, None] == 1.0
    out = np.where(on, draw32, sv)
    return Image(out.astype(np.float32)), Image(mask[:, :, None])


def texture_gt(input_img: Image, s: Image, mode: str = "remapped") -> Image:
    if input_img.data.shape != s.data.shape:
        raise ValueError("input/structure dims differ")
    if mode not in ("literal", "remapped"):
        raise ValueError(f"unknown gt_mode {mode!r}")
    d = np.mean(np.abs(input_img.data.astype(np.float64) - s.data.astype(np.float64)), axis=2)
    t = 1.0 / (1.0 + np.exp(-d))
    if mode == "remapped":
        t = 2.0 * (t - 0.5)
    return Image(t[:, :, None].astype(np.float32))


SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]) / 4.0
SOBEL_Y = SOBEL_X.T


def structure_gt(s: Image, threshold: float = 0.1) -> Image:
    """Binary edge map: normalized Sobel magnitude of the luma, thresholded."""
    g = to_grayscale(s).data[:, :, 0].astype(np.float64)
    gp = np.pad(g, 1, mode="edge")
    gx = np.zeros_like(g)
    gy = np.zeros_like(g)
    for dy in range(3):
        for dx in range(3):
            win = gp[dy : dy + g.shape[0], dx : dx + g.shape[1]]
            gx += SOBEL_X[dy, dx] * win
            gy += SOBEL_Y[dy, dx] * win
    mag = np.hypot(gx, gy)
    return Image(((mag >= threshold).astype(np.float32))[:, :, None])


def generate_sample(
    s: Image,
    pool: list[TexturePattern],
    seed: int,
    cfg: BlendConfig = BlendConfig(),
) -> GeneratedSample:
    """Deterministic sample from (structure image, pattern pool, seed).

    RNG draw order is fixed: pattern pick, transform, then blend values.
    """
    if not pool:
        raise ValueError("pattern pool is empty")
    rng = np.random.default_rng(seed)
    idx = int(rng.integers(len(pool)))
    pattern, params = random_transform(pool[idx], rng)
    inp, mask = blend(s, pattern, cfg, rng)
    tgt = texture_gt(inp, s, cfg.gt_mode)
    egt = structure_gt(s)
    return GeneratedSample(
        input=inp,
        structure_only=s,
        texture_gt=tgt,
        texture_mask=mask,
        structure_map=egt,
        seed=seed,
        transform=params,
        pattern_index=idx,
    )


def crop_sample(sample: GeneratedSample, y0: int, x0: int, h: int, w: int) -> GeneratedSample:
    """Crop every map in lockstep; all pixelwise laws survive."""
    from .imagecore import crop

    return GeneratedSample(
        input=crop(sample.input, y0, x0, h, w),
        structure_only=crop(sample.structure_only, y0, x0, h, w),
        texture_gt=crop(sample.texture_gt, y0, x0, h, w),
        texture_mask=crop(sample.texture_mask, y0, x0, h, w),
        structure_map=crop(sample.structure_map, y0, x0, h, w),
        seed=sample.seed,
        transform=sample.transform,
        pattern_index=sample.pattern_index,
    )
