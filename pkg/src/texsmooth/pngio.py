"""PNG image files and the raw TXS1 tensor file format.

PNG values map to [0, 1] by v/255 (8-bit) or v/65535 (16-bit); writing
quantizes with round-to-nearest. Tensor files are magic "TXS1", four 32-bit
little-endian unsigned dims (n, c, h, w), then n*c*h*w little-endian floats.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image as PilImage

from .imagecore import Image

TENSOR_MAGIC = b"TXS1"


def read_image(path) -> Image:
    with PilImage.open(path) as pil:
        mode = pil.mode
        if mode in ("I;16", "I"):
            arr = np.asarray(pil, dtype=np.float32) / 65535.0
            arr = arr[..., None]
        elif mode == "L":
            arr = np.asarray(pil, dtype=np.float32) / 255.0
            arr = arr[..., None]
        elif mode == "RGB":
            arr = np.asarray(pil, dtype=np.float32) / 255.0
        elif mode in ("RGBA", "P", "LA"):
            arr = np.asarray(pil.convert("RGB"), dtype=np.float32) / 255.0
        else:
            raise ValueError(f"unsupported PNG mode {mode!r} in {path}")
    return Image(np.clip(arr, 0.0, 1.0))


def write_image(path, img: Image, bits: int = 8) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if bits == 8:
        q = np.rint(img.data * 255.0).astype(np.uint8)
        pil = PilImage.fromarray(q[..., 0] if img.channels == 1 else q)
    elif bits == 16:
        if img.channels != 1:
            raise ValueError("16-bit PNG output is single-channel only")
        q = np.rint(img.data[..., 0].astype(np.float64) * 65535.0).astype(np.uint16)
        pil = PilImage.fromarray(q)
    else:
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    pil.save(path)


def write_tensor(path, t: np.ndarray) -> None:
    t = np.asarray(t)
    if t.ndim != 4:
        raise ValueError(f"tensor file stores NCHW tensors, got shape {t.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<4I", *t.shape))
        fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != TENSOR_MAGIC:
            raise ValueError(f"bad tensor file magic {magic!r} in {path}")
        dims = struct.unpack("<4I", fh.read(16))
        count = int(np.prod(dims))
        data = np.frombuffer(fh.read(count * 4), dtype="<f4")
        if data.size != count:
            raise ValueError(f"truncated tensor file {path}")
    return data.reshape(dims).astype(np.float32)
