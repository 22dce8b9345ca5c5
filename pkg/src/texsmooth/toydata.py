"""Deterministic toy corpus: cartoon structure images + procedural textures.

Structure images are flat-color backgrounds with a few flat-color shapes
(exactly the "structure-only" regime: piecewise constant, hard edges).
Texture images are smooth periodic fields on a mid-gray background, so the
extracted patterns are gentle enough to survive warps with low resampling
error. Everything is a pure function of (count, seed).
"""

from __future__ import annotations

import os

import numpy as np

from .imagecore import Image
from .pngio import write_image
from .texgen import BlendConfig, GeneratedSample, TexturePattern, crop_sample, extract_texture_pattern, generate_sample

GEN_SIZE = 104  # blending needs >= one 100x100 tile; maps are cropped afterwards
N_TEXTURES = 12


def make_structure_image(rng: np.random.Generator, size: int = GEN_SIZE) -> Image:
    """Flat background plus 2-4 flat rectangles/disks, mostly bright fills.

    Bright fills keep the blended texture strictly darker than the structure
    (blend draws from [kappa*(1-S), 1-S]), so brightness separates the two
    classes and a short training budget suffices to rank them. One fill in
    five is dark instead; there the blend lands in the brightness range of
    the bright fills' texture, so a pure threshold misfires and context has
    to disambiguate. That residue is what makes the guidance channels carry
    information the raw pixels do not.
    """

    def color():
        if rng.random() < 0.2:
            return rng.uniform(0.2, 0.45, 3).astype(np.float32)
        return rng.uniform(0.55, 0.9, 3).astype(np.float32)

    data = np.empty((size, size, 3), np.float32)
    data[:] = color()
    yy, xx = np.mgrid[0:size, 0:size]
    for _ in range(int(rng.integers(2, 5))):
        c = color()
        if rng.random() < 0.5:
            y0, x0 = rng.integers(0, size - 10, 2)
            h = int(rng.integers(10, size // 2))
            w = int(rng.integers(10, size // 2))
            data[y0 : y0 + h, x0 : x0 + w] = c
        else:
            cy, cx = rng.integers(10, size - 10, 2)
            r = int(rng.integers(8, size // 3))
            data[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = c
    return Image(data)


def _field(kind: str, period: float, angle: float, phase: float) -> np.ndarray:
    yy, xx = np.mgrid[0:100, 0:100].astype(np.float64)
    u = xx * np.cos(angle) + yy * np.sin(angle)
    v = -xx * np.sin(angle) + yy * np.cos(angle)
    def shoulder(raw, lo):
        t = np.clip((raw - lo) / (1.0 - lo), 0.0, 1.0)
        return t * t * (3.0 - 2.0 * t)

    if kind == "stripes":
        field = shoulder(np.sin(2 * np.pi * u / period + phase), 0.2)
    elif kind == "dots":
        g = period
        du = np.mod(u, g) - g / 2
        dv = np.mod(v, g) - g / 2
        field = np.exp(-(du * du + dv * dv) / (2 * (g / 7.0) ** 2))
        field[field < 0.05] = 0.0
    elif kind == "waves":
        field = shoulder(np.sin(2 * np.pi * u / period + phase) * np.sin(2 * np.pi * v / period + phase), 0.1)
    else:
        raise ValueError(f"unknown field kind {kind!r}")
    # confine support to a smooth disk about the center so shears and scales
    # wrap only zeros across the canvas seam (rotations may still wrap disk
    # content into the canvas corners; harmless for training data)
    r = np.hypot(xx - 49.5, yy - 49.5)
    window = np.clip((48.0 - r) / 8.0, 0.0, 1.0)
    window = window * window * (3.0 - 2.0 * window)
    return field * window


def make_texture_image(index: int) -> Image:
    """Smooth texture on a 0.55 gray background; mask coverage stays below half."""
    kinds = ("stripes", "dots", "waves")
    kind = kinds[index % 3]
    variant = index // 3
    period = {"stripes": 28.0, "dots": 18.0, "waves": 24.0}[kind] + 5.0 * variant
    angle = 0.35 * index
    phase = 0.8 * index
    field = _field(kind, period, angle, phase)
    data = 0.55 - 0.35 * field
    return Image(np.repeat(data[:, :, None], 3, axis=2).astype(np.float32))


def make_texture_bank(n: int = N_TEXTURES) -> list[TexturePattern]:
    return [extract_texture_pattern(make_texture_image(i)) for i in range(n)]


def build_toy_dataset(count: int, seed: int = 0, size: int = 64, cfg: BlendConfig = BlendConfig()) -> list[GeneratedSample]:
    """Generate count samples at GEN_SIZE and center-crop every map to size."""
    if size > GEN_SIZE:
        raise ValueError(f"size must be <= {GEN_SIZE}")
    pool = make_texture_bank()
    master = np.random.default_rng(seed)
    sample_seeds = master.integers(np.iinfo(np.int64).max, size=count)
    samples = []
    off = (GEN_SIZE - size) // 2
    for i in range(count):
        s_rng = np.random.default_rng(sample_seeds[i])
        structure = make_structure_image(s_rng)
        sample = generate_sample(structure, pool, int(sample_seeds[i]) ^ 0x5A5A, cfg)
        samples.append(crop_sample(sample, off, off, size, size))
    return samples


def write_toy_inputs(root: str, n_structures: int = 6, n_textures: int = 6, seed: int = 0) -> tuple[str, str]:
    """Materialize toy structure/texture PNGs for the dataset-generation CLI."""
    sdir = os.path.join(root, "structures")
    tdir = os.path.join(root, "textures")
    os.makedirs(sdir, exist_ok=True)
    os.makedirs(tdir, exist_ok=True)
    rng = np.random.default_rng(seed)
    for i in range(n_structures):
        write_image(os.path.join(sdir, f"s{i:03d}.png"), make_structure_image(rng))
    for i in range(n_textures):
        write_image(os.path.join(tdir, f"t{i:03d}.png"), make_texture_image(i))
    return sdir, tdir
