"""Training loops: per-network pretraining and joint fine-tuning.

All loops are plain SGD with momentum on randomly cropped patches. Everything
is deterministic for a fixed seed: one rng per run drives init (where
applicable) and patch sampling in a fixed order.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .models import SpnModel, TpnModel, TsafnModel
from .nn import LossWeights, TrainConfig

GUIDANCE_PLACEHOLDER = 0.5


def _check_patches(samples, patch: int):
    if not samples:
        raise ValueError("dataset is empty")
    for s in samples:
        if s.input.height < patch or s.input.width < patch:
            raise ValueError(f"sample smaller than patch size {patch}")


def sample_patch_batch(samples, rng: np.random.Generator, patch: int, batch: int, fields):
    """Crop a batch of aligned random patches; returns one NCHW tensor per field."""
    out = {f: [] for f in fields}
    for _ in range(batch):
        s = samples[int(rng.integers(len(samples)))]
        y0 = int(rng.integers(s.input.height - patch + 1))
        x0 = int(rng.integers(s.input.width - patch + 1))
        for f in fields:
            img = getattr(s, f)
            out[f].append(np.moveaxis(img.data[y0 : y0 + patch, x0 : x0 + patch], 2, 0))
    return tuple(np.stack(out[f]).astype(np.float32) for f in fields)


def train_tpn(samples, cfg: TrainConfig):
    """Texture net on (input, texture gt) patches under MSE."""
    if cfg.patch_size % 8:
        raise ValueError("patch size must be divisible by 8")
    _check_patches(samples, cfg.patch_size)
    rng = np.random.default_rng(cfg.seed)
    model = TpnModel.init(rng)
    losses = []
    for _ in range(cfg.steps):
        x, tgt = sample_patch_batch(samples, rng, cfg.patch_size, cfg.batch_size, ("input", "texture_gt"))
        out, cache = model.forward(x)
        loss, g = nn.mse_loss(out, tgt)
        grads, _ = model.backward(cache, g)
        nn.sgd_momentum_step(model.params, grads, cfg.learning_rate, cfg.momentum)
        losses.append(loss)
    return model, losses


def _spn_loss_and_grads(fused, sides, egt):
    loss = 0.0
    l, g_fused = nn.weighted_bce_loss(fused, egt)
    loss += l
    g_sides = []
    for s in sides:
        ls, gs = nn.weighted_bce_loss(s, egt)
        loss += ls
        g_sides.append(gs)
    return loss, g_fused, g_sides


def train_spn(samples, cfg: TrainConfig):
    """Edge net on (input, edge gt) patches; loss sums the side and fused terms."""
    if cfg.patch_size % 4:
        raise ValueError("patch size must be divisible by 4")
    _check_patches(samples, cfg.patch_size)
    rng = np.random.default_rng(cfg.seed)
    model = SpnModel.init(rng)
    losses = []
    for _ in range(cfg.steps):
        x, egt = sample_patch_batch(samples, rng, cfg.patch_size, cfg.batch_size, ("input", "structure_map"))
        fused, sides, cache = model.forward(x)
        loss, g_fused, g_sides = _spn_loss_and_grads(fused, sides, egt)
        grads, _ = model.backward(cache, g_fused, g_sides)
        nn.sgd_momentum_step(model.params, grads, cfg.learning_rate, cfg.momentum)
        losses.append(loss)
    return model, losses


def _guidance(x, tpn, spn, ablation: str):
    from .models import ABLATION_MODES

    if ablation not in ABLATION_MODES:
        raise ValueError(f"ablation must be one of {ABLATION_MODES}, got {ablation!r}")
    n, _, h, w = x.shape
    shape1 = (n, 1, h, w)
    if ablation in ("texture_only", "double"):
        if tpn is None:
            raise ValueError("missing checkpoint: tpn")
        t_map, _ = tpn.forward(x)
    else:
        t_map = np.full(shape1, GUIDANCE_PLACEHOLDER, dtype=np.float32)
    if ablation in ("structure_only", "double"):
        if spn is None:
            raise ValueError("missing checkpoint: spn")
        e_map, _, _ = spn.forward(x)
    else:
        e_map = np.full(shape1, GUIDANCE_PLACEHOLDER, dtype=np.float32)
    return t_map, e_map


def train_tsafn(samples, cfg: TrainConfig, tpn=None, spn=None, ablation: str = "double"):
    """Filter net on 5-channel input vs structure-only gt; guidance nets frozen."""
    if ablation in ("texture_only", "double") and cfg.patch_size % 8:
        raise ValueError("patch size must be divisible by 8")
    if ablation in ("structure_only",) and cfg.patch_size % 4:
        raise ValueError("patch size must be divisible by 4")
    _check_patches(samples, cfg.patch_size)
    rng = np.random.default_rng(cfg.seed)
    model = TsafnModel.init(rng)
    losses = []
    for _ in range(cfg.steps):
        x, sgt = sample_patch_batch(samples, rng, cfg.patch_size, cfg.batch_size, ("input", "structure_only"))
        t_map, e_map = _guidance(x, tpn, spn, ablation)
        out, cache = model.forward(x, e_map, t_map)
        loss, g = nn.mse_loss(out, sgt)
        grads, _ = model.backward(cache, g)
        nn.sgd_momentum_step(model.params, grads, cfg.learning_rate, cfg.momentum)
        losses.append(loss)
    return model, losses


def finetune_joint(samples, cfg: TrainConfig, tpn, spn, tsafn, weights: LossWeights = LossWeights()):
    """Couple the three nets: gradients of the combined loss flow from the filter
    output back through the guidance channels into both prediction nets."""
    if cfg.patch_size % 8:
        raise ValueError("patch size must be divisible by 8")
    _check_patches(samples, cfg.patch_size)
    rng = np.random.default_rng(cfg.seed)
    history = {"loss": [], "l_d": [], "l_t": [], "l_e": []}
    for _ in range(cfg.steps):
        x, sgt, tgt, egt = sample_patch_batch(
            samples, rng, cfg.patch_size, cfg.batch_size, ("input", "structure_only", "texture_gt", "structure_map")
        )
        t_map, tpn_cache = tpn.forward(x)
        fused, sides, spn_cache = spn.forward(x)
        out, ts_cache = tsafn.forward(x, fused, t_map)

        l_d, g_d = nn.mse_loss(out, sgt)
        l_t, g_t = nn.mse_loss(t_map, tgt)
        l_e, g_fused, g_sides = _spn_loss_and_grads(fused, sides, egt)
        total = nn.combined_finetune_loss(l_d, l_t, l_e, weights)

        gamma = np.float32(weights.gamma)
        lam = np.float32(weights.lam)
        ts_grads, (_, g_e, g_tch) = tsafn.backward(ts_cache, gamma * g_d)
        tpn_grads, _ = tpn.backward(tpn_cache, g_tch + lam * g_t)
        spn_grads, _ = spn.backward(spn_cache, g_e + lam * g_fused, [lam * g for g in g_sides])

        lr = cfg.finetune_learning_rate
        nn.sgd_momentum_step(tsafn.params, ts_grads, lr, cfg.momentum)
        nn.sgd_momentum_step(tpn.params, tpn_grads, lr, cfg.momentum)
        nn.sgd_momentum_step(spn.params, spn_grads, lr, cfg.momentum)

        history["loss"].append(total)
        history["l_d"].append(l_d)
        history["l_t"].append(l_t)
        history["l_e"].append(l_e)
    return (tpn, spn, tsafn), history


def validation_mse(samples, tsafn, tpn=None, spn=None, ablation: str = "double") -> float:
    """Mean filter loss over whole samples (no cropping, no updates)."""
    if not samples:
        raise ValueError("dataset is empty")
    total = 0.0
    for s in samples:
        x = np.moveaxis(s.input.data, 2, 0)[None]
        sgt = np.moveaxis(s.structure_only.data, 2, 0)[None]
        t_map, e_map = _guidance(x, tpn, spn, ablation)
        out, _ = tsafn.forward(x, e_map, t_map)
        total += nn.mse_loss(out, sgt)[0]
    return total / len(samples)
