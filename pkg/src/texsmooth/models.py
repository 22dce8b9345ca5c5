"""The three networks and the full smoothing pipeline.

TPN predicts a texture confidence map from 4 image scales, SPN predicts edge
maps HED-style with per-stage side outputs, and TSAFN filters the image guided
by both maps. Forwards return caches that the matching backwards consume;
gradients are exact (checked against finite differences in gradcheck).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .imagecore import Image, clamp01, image_to_tensor
from .nn import (
    ConvSpec,
    ModelParams,
    concat_channels,
    concat_channels_backward,
    conv_backward,
    conv_forward,
    init_conv,
    read_checkpoint,
    relu_backward,
    relu_forward,
    resize_tensor,
    resize_tensor_adjoint,
    sigmoid_backward,
    sigmoid_forward,
    write_checkpoint,
)

ABLATION_MODES = ("none", "structure_only", "texture_only", "double")
GUIDANCE_PLACEHOLDER = 0.5  # neutral value of a sigmoid map
MODELS_INDEX = "models.json"


def _chain_forward(x, layers, params, prefix):
    pre = []
    post = [x]
    h = x
    for name, spec, act in layers:
        z = conv_forward(h, spec, params[f"{prefix}.{name}.w"], params[f"{prefix}.{name}.b"])
        pre.append(z)
        if act == "relu":
            h = relu_forward(z)
        elif act == "sigmoid":
            h = sigmoid_forward(z)
        else:
            h = z
        post.append(h)
    return h, (pre, post)


def _chain_backward(cache, layers, params, prefix, grad_out):
    pre, post = cache
    grads = {}
    g = grad_out
    for i in reversed(range(len(layers))):
        name, spec, act = layers[i]
        if act == "relu":
            g = relu_backward(pre[i], g)
        elif act == "sigmoid":
            g = sigmoid_backward(post[i + 1], g)
        g, gw, gb = conv_backward(post[i], spec, params[f"{prefix}.{name}.w"], g)
        grads[f"{prefix}.{name}.w"] = gw
        grads[f"{prefix}.{name}.b"] = gb
    return grads, g


def _init_chain(rng, layers, prefix, dtype):
    values = {}
    for name, spec, act in layers:
        w, b = init_conv(rng, spec, act if act != "linear" else "linear", dtype)
        values[f"{prefix}.{name}.w"] = w
        values[f"{prefix}.{name}.b"] = b
    return values


class TpnModel:
    """Texture prediction: 4 scale branches, 16-channel concat, fused sigmoid map."""

    SCALES = (1, 2, 4, 8)
    BRANCH_WIDTHS = (8, 8, 4)
    BRANCH_LAYERS = [
        ("c0", ConvSpec(3, 3, 8), "relu"),
        ("c1", ConvSpec(3, 8, 8), "relu"),
        ("c2", ConvSpec(3, 8, 4), "relu"),
    ]
    FUSE = ("fuse", ConvSpec(3, 16, 1), "sigmoid")

    def __init__(self, params: ModelParams):
        self.params = params

    @classmethod
    def arch_config(cls) -> dict:
        return {"scales": list(cls.SCALES), "branch_widths": list(cls.BRANCH_WIDTHS)}

    @classmethod
    def param_specs(cls) -> dict[str, tuple]:
        specs = {}
        for i in range(len(cls.SCALES)):
            for name, spec, _ in cls.BRANCH_LAYERS:
                specs[f"tpn.s{i}.{name}.w"] = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
                specs[f"tpn.s{i}.{name}.b"] = (spec.out_channels,)
        spec = cls.FUSE[1]
        specs["tpn.fuse.w"] = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
        specs["tpn.fuse.b"] = (spec.out_channels,)
        return specs

    @classmethod
    def init(cls, rng: np.random.Generator, dtype=np.float32) -> "TpnModel":
        values = {}
        for i in range(len(cls.SCALES)):
            values.update(_init_chain(rng, cls.BRANCH_LAYERS, f"tpn.s{i}", dtype))
        w, b = init_conv(rng, cls.FUSE[1], "sigmoid", dtype)
        values["tpn.fuse.w"] = w
        values["tpn.fuse.b"] = b
        return cls(ModelParams(values))

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 8 or w % 8:
            raise ValueError(f"tpn input dims must be divisible by 8, got {h}x{w}")
        ups = []
        caches = []
        for i, d in enumerate(self.SCALES):
            xi = resize_tensor(x, h // d, w // d) if d > 1 else x
            y, cache = _chain_forward(xi, self.BRANCH_LAYERS, self.params, f"tpn.s{i}")
            ups.append(resize_tensor(y, h, w) if d > 1 else y)
            caches.append(cache)
        cat = concat_channels(ups)
        z = conv_forward(cat, self.FUSE[1], self.params["tpn.fuse.w"], self.params["tpn.fuse.b"])
        out = sigmoid_forward(z)
        return out, {"x": x, "caches": caches, "cat": cat, "out": out}

    def backward(self, cache, grad_out):
        x = cache["x"]
        h, w = x.shape[2], x.shape[3]
        g = sigmoid_backward(cache["out"], grad_out)
        g_cat, gw, gb = conv_backward(cache["cat"], self.FUSE[1], self.params["tpn.fuse.w"], g)
        grads = {"tpn.fuse.w": gw, "tpn.fuse.b": gb}
        width = self.BRANCH_LAYERS[-1][1].out_channels
        parts = concat_channels_backward(g_cat, [width] * len(self.SCALES))
        grad_x = np.zeros_like(x)
        for i, d in enumerate(self.SCALES):
            g_y = resize_tensor_adjoint(parts[i], h // d, w // d) if d > 1 else parts[i]
            br_grads, g_xi = _chain_backward(cache["caches"][i], self.BRANCH_LAYERS, self.params, f"tpn.s{i}", g_y)
            grads.update(br_grads)
            grad_x += resize_tensor_adjoint(g_xi, h, w) if d > 1 else g_xi
        return grads, grad_x


class SpnModel:
    """Structure prediction: 3 conv stages at 1, 1/2, 1/4 scale with side outputs."""

    STAGE_WIDTHS = (8, 16, 32)

    def __init__(self, params: ModelParams):
        self.params = params

    @classmethod
    def _stage_layers(cls, m: int):
        cin = 3 if m == 0 else cls.STAGE_WIDTHS[m - 1]
        width = cls.STAGE_WIDTHS[m]
        return [("c0", ConvSpec(3, cin, width), "relu"), ("c1", ConvSpec(3, width, width), "relu")]

    @classmethod
    def _side_spec(cls, m: int) -> ConvSpec:
        return ConvSpec(1, cls.STAGE_WIDTHS[m], 1)

    FUSE_SPEC = ConvSpec(1, 3, 1)

    @classmethod
    def arch_config(cls) -> dict:
        return {"stage_widths": list(cls.STAGE_WIDTHS)}

    @classmethod
    def param_specs(cls) -> dict[str, tuple]:
        specs = {}
        for m in range(3):
            for name, spec, _ in cls._stage_layers(m):
                specs[f"spn.t{m}.{name}.w"] = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
                specs[f"spn.t{m}.{name}.b"] = (spec.out_channels,)
            side = cls._side_spec(m)
            specs[f"spn.side{m}.w"] = (1, side.in_channels, 1, 1)
            specs[f"spn.side{m}.b"] = (1,)
        specs["spn.fuse.w"] = (1, 3, 1, 1)
        specs["spn.fuse.b"] = (1,)
        return specs

    @classmethod
    def init(cls, rng: np.random.Generator, dtype=np.float32) -> "SpnModel":
        values = {}
        for m in range(3):
            values.update(_init_chain(rng, cls._stage_layers(m), f"spn.t{m}", dtype))
            w, b = init_conv(rng, cls._side_spec(m), "sigmoid", dtype)
            values[f"spn.side{m}.w"] = w
            values[f"spn.side{m}.b"] = b
        w, b = init_conv(rng, cls.FUSE_SPEC, "sigmoid", dtype)
        values["spn.fuse.w"] = w
        values["spn.fuse.b"] = b
        return cls(ModelParams(values))

    def forward(self, x):
        n, c, h, w = x.shape
        if h % 4 or w % 4:
            raise ValueError(f"spn input dims must be divisible by 4, got {h}x{w}")
        feats = []
        caches = []
        inputs = []
        cur = x
        for m in range(3):
            if m > 0:
                cur = resize_tensor(cur, h // (2**m), w // (2**m))
            inputs.append(cur)
            cur, cache = _chain_forward(cur, self._stage_layers(m), self.params, f"spn.t{m}")
            feats.append(cur)
            caches.append(cache)
        logits = []
        for m in range(3):
            z = conv_forward(feats[m], self._side_spec(m), self.params[f"spn.side{m}.w"], self.params[f"spn.side{m}.b"])
            logits.append(resize_tensor(z, h, w) if m > 0 else z)
        sides = [sigmoid_forward(z) for z in logits]
        cat = concat_channels(logits)
        fuse_z = conv_forward(cat, self.FUSE_SPEC, self.params["spn.fuse.w"], self.params["spn.fuse.b"])
        fused = sigmoid_forward(fuse_z)
        cache = {"x": x, "caches": caches, "feats": feats, "inputs": inputs, "cat": cat, "sides": sides, "fused": fused}
        return fused, sides, cache

    def backward(self, cache, grad_fused, grad_sides=None):
        x = cache["x"]
        h, w = x.shape[2], x.shape[3]
        g = sigmoid_backward(cache["fused"], grad_fused)
        g_cat, gw, gb = conv_backward(cache["cat"], self.FUSE_SPEC, self.params["spn.fuse.w"], g)
        grads = {"spn.fuse.w": gw, "spn.fuse.b": gb}
        g_logits = concat_channels_backward(g_cat, [1, 1, 1])
        if grad_sides is not None:
            for m in range(3):
                g_logits[m] = g_logits[m] + sigmoid_backward(cache["sides"][m], grad_sides[m])
        g_next_input = None
        for m in reversed(range(3)):
            sh, sw = h // (2**m), w // (2**m)
            g_z = resize_tensor_adjoint(g_logits[m], sh, sw) if m > 0 else g_logits[m]
            g_feat, gw, gb = conv_backward(cache["feats"][m], self._side_spec(m), self.params[f"spn.side{m}.w"], g_z)
            grads[f"spn.side{m}.w"] = gw
            grads[f"spn.side{m}.b"] = gb
            if g_next_input is not None:
                g_feat = g_feat + resize_tensor_adjoint(g_next_input, sh, sw)
            st_grads, g_in = _chain_backward(cache["caches"][m], self._stage_layers(m), self.params, f"spn.t{m}", g_feat)
            grads.update(st_grads)
            g_next_input = g_in
        return grads, g_next_input


class TsafnModel:
    """Guided filter: 5-channel input (RGB + edge + texture maps), linear output."""

    KERNELS = (7, 5, 3, 5)
    WIDTHS = (32, 16, 8, 3)
    LAYERS = [
        ("c0", ConvSpec(7, 5, 32), "relu"),
        ("c1", ConvSpec(5, 32, 16), "relu"),
        ("c2", ConvSpec(3, 16, 8), "relu"),
        ("c3", ConvSpec(5, 8, 3), "linear"),
    ]

    def __init__(self, params: ModelParams):
        self.params = params

    @classmethod
    def arch_config(cls) -> dict:
        return {"kernels": list(cls.KERNELS), "widths": list(cls.WIDTHS)}

    @classmethod
    def param_specs(cls) -> dict[str, tuple]:
        specs = {}
        for name, spec, _ in cls.LAYERS:
            specs[f"tsafn.{name}.w"] = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
            specs[f"tsafn.{name}.b"] = (spec.out_channels,)
        return specs

    @classmethod
    def init(cls, rng: np.random.Generator, dtype=np.float32) -> "TsafnModel":
        return cls(ModelParams(_init_chain(rng, cls.LAYERS, "tsafn", dtype)))

    def forward(self, i, e, t):
        for name, m, c in (("rgb", i, 3), ("edge", e, 1), ("texture", t, 1)):
            if m.shape[1] != c:
                raise ValueError(f"{name} input must have {c} channels, got {m.shape[1]}")
            if m.shape[0] != i.shape[0] or m.shape[2:] != i.shape[2:]:
                raise ValueError(f"{name} input dims {m.shape} do not match {i.shape}")
        x5 = concat_channels([i, e, t])
        out, cache = _chain_forward(x5, self.LAYERS, self.params, "tsafn")
        return out, {"x5": x5, "chain": cache}

    def backward(self, cache, grad_out):
        grads, g_x5 = _chain_backward(cache["chain"], self.LAYERS, self.params, "tsafn", grad_out)
        g_i, g_e, g_t = concat_channels_backward(g_x5, [3, 1, 1])
        return grads, (g_i, g_e, g_t)


MODEL_CLASSES = {"tpn": TpnModel, "spn": SpnModel, "tsafn": TsafnModel}


def save_models(models_dir, models: dict) -> None:
    """Write checkpoints and update the role -> checkpoint/architecture index."""
    os.makedirs(models_dir, exist_ok=True)
    index_path = os.path.join(models_dir, MODELS_INDEX)
    index = {}
    if os.path.exists(index_path):
        with open(index_path) as fh:
            index = json.load(fh)
    for role, model in models.items():
        if role not in MODEL_CLASSES:
            raise ValueError(f"unknown model role {role!r}")
        fname = f"{role}.txsw"
        write_checkpoint(os.path.join(models_dir, fname), model.params)
        index[role] = {"checkpoint": fname, "arch": model.arch_config()}
    with open(index_path, "w") as fh:
        json.dump(index, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_models(models_dir, roles) -> dict:
    """Load requested roles, validating architecture and tensor shapes first."""
    index_path = os.path.join(models_dir, MODELS_INDEX)
    index = {}
    if os.path.exists(index_path):
        with open(index_path) as fh:
            index = json.load(fh)
    out = {}
    for role in roles:
        if role not in MODEL_CLASSES:
            raise ValueError(f"unknown model role {role!r}")
        if role not in index:
            raise ValueError(f"missing checkpoint: {role}")
        cls = MODEL_CLASSES[role]
        entry = index[role]
        if entry.get("arch") != cls.arch_config():
            raise ValueError(f"{role} architecture config {entry.get('arch')} does not match {cls.arch_config()} ({index_path})")
        path = os.path.join(models_dir, entry["checkpoint"])
        if not os.path.exists(path):
            raise ValueError(f"missing checkpoint: {role}")
        params = read_checkpoint(path)
        expected = cls.param_specs()
        got = {k: tuple(v.shape) for k, v in params.values.items()}
        if got != expected:
            raise ValueError(f"{role} checkpoint {path} has unexpected tensor shapes")
        out[role] = cls(params)
    return out


@dataclass(frozen=True)
class SmoothResult:
    output: Image
    texture: Image
    structure: Image


def _pad_to_multiple(data: np.ndarray, mult: int) -> np.ndarray:
    h, w = data.shape[:2]
    ph = (-h) % mult
    pw = (-w) % mult
    if ph == 0 and pw == 0:
        return data
    mode = "reflect" if ph < h and pw < w else "edge"
    return np.pad(data, ((0, ph), (0, pw), (0, 0)), mode=mode)


def smooth(img: Image, models: dict, ablation: str = "double") -> SmoothResult:
    """Run the pipeline on one image; guidance configuration per the ablation flag.

    "double" feeds both predicted maps (the full model); disabled channels are
    filled with the 0.5 placeholder. Input dims are reflect-padded to a multiple
    of 8 and the outputs cropped back.
    """
    if ablation not in ABLATION_MODES:
        raise ValueError(f"ablation must be one of {ABLATION_MODES}, got {ablation!r}")
    if img.channels != 3:
        raise ValueError("smooth expects a 3-channel image")
    if "tsafn" not in models:
        raise ValueError("missing checkpoint: tsafn")
    h, w = img.height, img.width
    data = _pad_to_multiple(img.data, 8)
    x = image_to_tensor([Image(data)])
    shape1 = (1, 1, data.shape[0], data.shape[1])
    if ablation in ("texture_only", "double"):
        if "tpn" not in models:
            raise ValueError("missing checkpoint: tpn")
        t_map, _ = models["tpn"].forward(x)
    else:
        t_map = np.full(shape1, GUIDANCE_PLACEHOLDER, dtype=np.float32)
    if ablation in ("structure_only", "double"):
        if "spn" not in models:
            raise ValueError("missing checkpoint: spn")
        e_map, _, _ = models["spn"].forward(x)
    else:
        e_map = np.full(shape1, GUIDANCE_PLACEHOLDER, dtype=np.float32)
    raw, _ = models["tsafn"].forward(x, e_map, t_map)

    def to_image(t, channels):
        arr = np.moveaxis(t[0], 0, 2)[:h, :w, :]
        return Image(clamp01(arr[:, :, :channels]))

    return SmoothResult(output=to_image(raw, 3), texture=to_image(t_map, 1), structure=to_image(e_map, 1))
