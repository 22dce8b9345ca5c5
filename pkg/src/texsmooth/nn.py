"""Differentiable building blocks, losses, optimizer, and checkpoints.

Everything is hand-wired: each forward has a matching backward with exact
analytic gradients (verified against central differences in gradcheck).
Losses accumulate in double precision and return python floats.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imagecore import bilinear_weights
from .kernels import conv2d_backward, conv2d_forward, out_size

CHECKPOINT_MAGIC = b"TXSW"
CHECKPOINT_VERSION = 1
BCE_EPS = 1e-7


@dataclass(frozen=True)
class ConvSpec:
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError(f"kernel must be odd, got {self.kernel}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    finetune_learning_rate: float = 1e-5
    patch_size: int = 64
    batch_size: int = 16
    steps: int = 500
    seed: int = 0

    def __post_init__(self):
        # zero is allowed so a frozen-parameter run is expressible
        if self.learning_rate < 0 or self.finetune_learning_rate < 0:
            raise ValueError("learning rates must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 0.6
    lam: float = 0.2

    def __post_init__(self):
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("loss weights must be >= 0")


class ModelParams:
    """Ordered named parameter tensors with matching momentum buffers."""

    def __init__(self, values: dict[str, np.ndarray]):
        self.values = {k: np.asarray(v) for k, v in values.items()}
        for name, v in self.values.items():
            if not np.isfinite(v).all():
                raise ValueError(f"parameter {name} contains non-finite values")
        self.momentum = {k: np.zeros_like(v) for k, v in self.values.items()}

    def names(self) -> list[str]:
        return list(self.values)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def astype(self, dtype) -> "ModelParams":
        out = ModelParams({k: v.astype(dtype) for k, v in self.values.items()})
        out.momentum = {k: v.astype(dtype) for k, v in self.momentum.items()}
        return out

    def copy(self) -> "ModelParams":
        out = ModelParams({k: v.copy() for k, v in self.values.items()})
        out.momentum = {k: v.copy() for k, v in self.momentum.items()}
        return out


def init_conv(rng: np.random.Generator, spec: ConvSpec, activation: str, dtype=np.float32):
    """Weight init: Kaiming fan-in for relu layers, Xavier for sigmoid/linear outputs."""
    fan_in = spec.in_channels * spec.kernel * spec.kernel
    fan_out = spec.out_channels * spec.kernel * spec.kernel
    if activation == "relu":
        std = np.sqrt(2.0 / fan_in)
    elif activation in ("sigmoid", "linear"):
        std = np.sqrt(2.0 / (fan_in + fan_out))
    else:
        raise ValueError(f"unknown activation {activation!r}")
    w = rng.normal(0.0, std, size=(spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
    b = np.zeros(spec.out_channels)
    return w.astype(dtype), b.astype(dtype)


# --- differentiable ops -------------------------------------------------


def conv_forward(x, spec: ConvSpec, w, b):
    if x.shape[1] != spec.in_channels:
        raise ValueError(f"input channels {x.shape[1]} != spec {spec.in_channels}")
    return conv2d_forward(x, w, b, spec.stride)


def conv_backward(x, spec: ConvSpec, w, grad_out):
    return conv2d_backward(x, w, grad_out, spec.stride)


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    # subgradient at 0 taken as 0
    return np.where(x > 0, grad_out, 0)


def sigmoid_forward(x):
    # two-branch form avoids exp overflow for large |x|
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(out, grad_out):
    return grad_out * out * (1.0 - out)


def activation(x, kind: str):
    if kind == "relu":
        return relu_forward(x)
    if kind == "sigmoid":
        return sigmoid_forward(x)
    raise ValueError(f"unknown activation {kind!r}")


def concat_channels(xs: list[np.ndarray]) -> np.ndarray:
    if not xs:
        raise ValueError("nothing to concatenate")
    base = xs[0].shape
    for x in xs[1:]:
        if x.shape[0] != base[0] or x.shape[2:] != base[2:]:
            raise ValueError(f"spatial/batch mismatch: {x.shape} vs {base}")
    return np.concatenate(xs, axis=1)


def concat_channels_backward(grad_out, channel_sizes: list[int]) -> list[np.ndarray]:
    if sum(channel_sizes) != grad_out.shape[1]:
        raise ValueError("channel sizes do not cover the gradient")
    bounds = np.cumsum([0] + list(channel_sizes))
    return [grad_out[:, bounds[i] : bounds[i + 1]].copy() for i in range(len(channel_sizes))]


def resize_tensor(x, out_h: int, out_w: int):
    """Bilinear resize of an NCHW tensor (half-pixel centers)."""
    rh = bilinear_weights(x.shape[2], out_h).astype(x.dtype)
    rw = bilinear_weights(x.shape[3], out_w).astype(x.dtype)
    return np.matmul(np.matmul(rh, x), rw.T)


def resize_tensor_adjoint(grad_out, in_h: int, in_w: int):
    """Exact adjoint of resize_tensor: scatters by the same interpolation weights."""
    rh = bilinear_weights(in_h, grad_out.shape[2]).astype(grad_out.dtype)
    rw = bilinear_weights(in_w, grad_out.shape[3]).astype(grad_out.dtype)
    return np.matmul(np.matmul(rh.T, grad_out), rw)


# --- losses -------------------------------------------------------------


def mse_loss(pred, gt):
    """Per-pixel squared L2 summed over channels, averaged over pixels."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    n_pixels = pred.shape[0] * pred.shape[2] * pred.shape[3]
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    loss = float(np.sum(diff * diff) / n_pixels)
    grad = ((2.0 / n_pixels) * diff).astype(pred.dtype)
    return loss, grad


def weighted_bce_loss(pred, gt):
    """Class-balanced cross entropy; beta is the fraction of positive labels."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    gt64 = gt.astype(np.float64)
    if not np.isin(gt64, (0.0, 1.0)).all():
        raise ValueError("ground truth must be binary")
    pos = gt64 == 1.0
    beta = float(pos.sum()) / gt64.size
    p = np.clip(pred.astype(np.float64), BCE_EPS, 1.0 - BCE_EPS)
    loss = float(-beta * np.sum(np.log(p[pos])) - (1.0 - beta) * np.sum(np.log1p(-p[~pos])))
    grad = np.where(pos, -beta / p, (1.0 - beta) / (1.0 - p))
    # the clamp is flat outside (eps, 1-eps); no gradient flows there
    grad[pred.astype(np.float64) != p] = 0.0
    return loss, grad.astype(pred.dtype)


def combined_finetune_loss(l_d: float, l_t: float, l_e: float, w: LossWeights) -> float:
    return w.gamma * l_d + w.lam * (l_t + l_e)


# --- optimizer ----------------------------------------------------------


def sgd_momentum_step(params: ModelParams, grads: dict[str, np.ndarray], lr: float, momentum: float) -> None:
    """Classic heavy-ball update, in place: v <- m*v + g; p <- p - lr*v."""
    for name, p in params.values.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name} shape {p.shape}")
        v = params.momentum[name]
        v *= momentum
        v += g
        p -= lr * v


# --- checkpoints --------------------------------------------------------


def _write_record(fh, name: str, arr: np.ndarray):
    data = np.ascontiguousarray(arr, dtype="<f4")
    dims = list(data.shape) + [1] * (4 - data.ndim)
    if len(dims) != 4:
        raise ValueError(f"parameter {name} has more than 4 dims: {data.shape}")
    raw = name.encode("utf-8")
    fh.write(np.uint32(len(raw)).tobytes())
    fh.write(raw)
    fh.write(np.asarray(dims, dtype="<u4").tobytes())
    fh.write(data.tobytes())


def write_checkpoint(path, params: ModelParams) -> None:
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(bytes([CHECKPOINT_VERSION]))
        for name, arr in params.values.items():
            _write_record(fh, name, arr)
        for name, arr in params.momentum.items():
            _write_record(fh, name + ".m", arr)


def _read_records(fh):
    while True:
        head = fh.read(4)
        if not head:
            return
        name_len = int(np.frombuffer(head, dtype="<u4")[0])
        name = fh.read(name_len).decode("utf-8")
        dims = tuple(int(d) for d in np.frombuffer(fh.read(16), dtype="<u4"))
        count = int(np.prod(dims))
        arr = np.frombuffer(fh.read(count * 4), dtype="<f4").astype(np.float32)
        if arr.size != count:
            raise ValueError(f"truncated checkpoint record {name!r}")
        yield name, arr.reshape(dims)


def read_checkpoint(path) -> ModelParams:
    values: dict[str, np.ndarray] = {}
    momentum: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic in {path}")
        version = fh.read(1)[0]
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        for name, arr in _read_records(fh):
            target = momentum if name.endswith(".m") else values
            key = name[:-2] if name.endswith(".m") else name
            # biases are stored padded to 4 dims; squeeze them back
            if key.endswith(".b"):
                arr = arr.reshape(arr.shape[0])
            target[key] = arr
    params = ModelParams(values)
    for key, arr in momentum.items():
        if key not in params.momentum:
            raise ValueError(f"momentum record {key!r} has no matching parameter")
        if arr.shape != params.values[key].shape:
            raise ValueError(f"momentum shape mismatch for {key!r}")
        params.momentum[key] = arr
    return params


@dataclass
class LayerGrads:
    """Accumulator for named parameter gradients."""

    grads: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, g: np.ndarray):
        if name in self.grads:
            self.grads[name] = self.grads[name] + g
        else:
            self.grads[name] = g
