from types import SimpleNamespace

import numpy as np
import pytest

from texsmooth import nn
from texsmooth.models import SpnModel, TpnModel, TsafnModel
from texsmooth.nn import LossWeights, TrainConfig
from texsmooth.toydata import build_toy_dataset
from texsmooth.training import (
    GUIDANCE_PLACEHOLDER,
    finetune_joint,
    sample_patch_batch,
    train_spn,
    train_tpn,
    train_tsafn,
    validation_mse,
)


def windowed(losses, width=50):
    arr = np.asarray(losses, dtype=np.float64)
    return [arr[i : i + width].mean() for i in range(0, len(arr), width)]


def params_snapshot(model):
    return {k: v.copy() for k, v in model.params.values.items()}


def assert_params_equal(model, snap):
    for k, v in model.params.values.items():
        assert np.array_equal(v, snap[k]), k


# --- patch sampling ------------------------------------------------------


def test_sample_patch_batch_shapes(toy_samples):
    rng = np.random.default_rng(0)
    x, tgt = sample_patch_batch(toy_samples, rng, 16, 3, ("input", "texture_gt"))
    assert x.shape == (3, 3, 16, 16)
    assert tgt.shape == (3, 1, 16, 16)
    assert x.dtype == np.float32 and tgt.dtype == np.float32


def test_sample_patch_batch_deterministic(toy_samples):
    a = sample_patch_batch(toy_samples, np.random.default_rng(5), 16, 4, ("input", "structure_only"))
    b = sample_patch_batch(toy_samples, np.random.default_rng(5), 16, 4, ("input", "structure_only"))
    for ta, tb in zip(a, b):
        assert np.array_equal(ta, tb)


def test_sample_patch_batch_crops_are_aligned(toy_samples):
    # off-mask pixels satisfy input == structure_only bit-exactly, so aligned
    # crops must preserve that identity wherever the mask crop is zero
    rng = np.random.default_rng(2)
    x, s, m = sample_patch_batch(toy_samples, rng, 32, 8, ("input", "structure_only", "texture_mask"))
    off = np.repeat(m == 0, 3, axis=1)
    assert np.array_equal(x[off], s[off])


def test_training_rejects_empty_dataset():
    cfg = TrainConfig(steps=1, patch_size=16, batch_size=1)
    with pytest.raises(ValueError):
        train_tpn([], cfg)
    with pytest.raises(ValueError):
        train_spn([], cfg)
    with pytest.raises(ValueError):
        train_tsafn([], cfg, ablation="none")
    with pytest.raises(ValueError):
        finetune_joint([], cfg, None, None, None)


def test_training_rejects_samples_smaller_than_patch():
    small = build_toy_dataset(1, seed=1, size=32)
    cfg = TrainConfig(steps=1, patch_size=64, batch_size=1)
    with pytest.raises(ValueError, match="patch"):
        train_tpn(small, cfg)


def test_training_patch_divisibility(toy_samples):
    with pytest.raises(ValueError, match="divisible"):
        train_tpn(toy_samples, TrainConfig(steps=1, patch_size=20, batch_size=1))
    with pytest.raises(ValueError, match="divisible"):
        train_spn(toy_samples, TrainConfig(steps=1, patch_size=18, batch_size=1))


# --- single-net loops ----------------------------------------------------


def test_train_tpn_lr_zero_is_frozen():
    one = build_toy_dataset(1, seed=2, size=32)
    frozen = TrainConfig(steps=5, patch_size=32, batch_size=1, learning_rate=0.0, seed=9)
    model, losses = train_tpn(one, frozen)
    # patch == image, so every step sees the same batch: flat history
    assert losses == [losses[0]] * 5
    init_only, empty = train_tpn(one, TrainConfig(steps=0, patch_size=32, batch_size=1, seed=9))
    assert empty == []
    assert_params_equal(model, params_snapshot(init_only))


def test_train_tpn_same_seed_identical_history(toy_samples):
    cfg = TrainConfig(steps=8, patch_size=16, batch_size=2, seed=4)
    _, h1 = train_tpn(toy_samples, cfg)
    _, h2 = train_tpn(toy_samples, cfg)
    assert h1 == h2


def test_train_spn_same_seed_identical_history(toy_samples):
    cfg = TrainConfig(steps=6, patch_size=16, batch_size=2, seed=4)
    _, h1 = train_spn(toy_samples, cfg)
    _, h2 = train_spn(toy_samples, cfg)
    assert h1 == h2
    assert all(v > 0.0 for v in h1)


def test_train_spn_halves_toy_loss(toy_samples):
    cfg = TrainConfig(steps=500, patch_size=32, batch_size=8, learning_rate=5e-5, seed=1)
    _, losses = train_spn(toy_samples, cfg)
    w = windowed(losses)
    assert w[-1] <= 0.5 * w[0], (w[0], w[-1])


def test_train_tsafn_requires_guidance_models(toy_samples):
    cfg = TrainConfig(steps=1, patch_size=16, batch_size=1)
    with pytest.raises(ValueError, match="missing checkpoint: tpn"):
        train_tsafn(toy_samples, cfg, ablation="double")
    tpn = TpnModel.init(np.random.default_rng(0))
    with pytest.raises(ValueError, match="missing checkpoint: spn"):
        train_tsafn(toy_samples, cfg, tpn=tpn, ablation="double")
    with pytest.raises(ValueError, match="ablation"):
        train_tsafn(toy_samples, cfg, ablation="both")


def test_train_tsafn_deterministic(toy_samples):
    cfg = TrainConfig(steps=6, patch_size=16, batch_size=2, seed=3)
    _, h1 = train_tsafn(toy_samples, cfg, ablation="none")
    _, h2 = train_tsafn(toy_samples, cfg, ablation="none")
    assert h1 == h2


def test_train_tsafn_windowed_loss_nonincreasing(toy_samples):
    # median across seeds of each 50-step window mean must not increase
    per_seed = []
    for seed in (1, 2, 3):
        cfg = TrainConfig(steps=200, patch_size=32, batch_size=4, learning_rate=1e-4, seed=seed)
        _, losses = train_tsafn(toy_samples, cfg, ablation="none")
        per_seed.append(windowed(losses))
    med = np.median(np.asarray(per_seed), axis=0)
    assert all(b <= a for a, b in zip(med, med[1:])), med


def test_train_tsafn_overfits_identity_on_single_sample():
    # gt wired to equal the input: the stack must be able to pass the image
    # through unchanged. A flat-fills image keeps that reachable in budget;
    # inputs with dense texture need far more than 2000 steps to reproduce.
    src = build_toy_dataset(1, seed=0, size=32)[0]
    pair = SimpleNamespace(input=src.structure_only, structure_only=src.structure_only)
    cfg = TrainConfig(steps=2000, patch_size=32, batch_size=1, learning_rate=5e-3, seed=1)
    _, losses = train_tsafn([pair], cfg, ablation="none")
    assert losses[-1] < 1e-3, losses[-1]


# --- validation ----------------------------------------------------------


def test_validation_mse_matches_manual_mean():
    samples = build_toy_dataset(2, seed=5, size=16)
    tsafn = TsafnModel.init(np.random.default_rng(1))
    expected = 0.0
    for s in samples:
        x = np.moveaxis(s.input.data, 2, 0)[None]
        sgt = np.moveaxis(s.structure_only.data, 2, 0)[None]
        g = np.full((1, 1, 16, 16), GUIDANCE_PLACEHOLDER, dtype=np.float32)
        out, _ = tsafn.forward(x, g, g)
        expected += nn.mse_loss(out, sgt)[0]
    got = validation_mse(samples, tsafn, ablation="none")
    assert got == pytest.approx(expected / 2, rel=1e-12)


def test_validation_mse_empty_errors():
    tsafn = TsafnModel.init(np.random.default_rng(1))
    with pytest.raises(ValueError):
        validation_mse([], tsafn, ablation="none")


# --- joint fine-tuning ---------------------------------------------------


def _pretrained_trio(samples, seed, steps=150):
    cfg = TrainConfig(steps=steps, patch_size=32, batch_size=8, learning_rate=5e-5, seed=seed)
    tpn, _ = train_tpn(samples, cfg)
    spn, _ = train_spn(samples, cfg)
    tsafn, _ = train_tsafn(samples, cfg, tpn=tpn, spn=spn)
    return tpn, spn, tsafn


def test_finetune_joint_zero_weights_is_noop(toy_samples):
    rng = np.random.default_rng(0)
    tpn, spn, tsafn = TpnModel.init(rng), SpnModel.init(rng), TsafnModel.init(rng)
    snaps = [params_snapshot(m) for m in (tpn, spn, tsafn)]
    cfg = TrainConfig(steps=3, patch_size=16, batch_size=2, seed=1)
    finetune_joint(toy_samples, cfg, tpn, spn, tsafn, weights=LossWeights(gamma=0.0, lam=0.0))
    for m, snap in zip((tpn, spn, tsafn), snaps):
        assert_params_equal(m, snap)


def test_finetune_joint_first_step_loss_decomposition(toy_samples):
    rng = np.random.default_rng(7)
    tpn, spn, tsafn = TpnModel.init(rng), SpnModel.init(rng), TsafnModel.init(rng)
    cfg = TrainConfig(steps=1, patch_size=16, batch_size=2, seed=11)
    # recompute the first batch with the same seed and field order
    batch_rng = np.random.default_rng(cfg.seed)
    x, sgt, tgt, egt = sample_patch_batch(
        toy_samples, batch_rng, cfg.patch_size, cfg.batch_size,
        ("input", "structure_only", "texture_gt", "structure_map"),
    )
    t_map, _ = tpn.forward(x)
    fused, sides, _ = spn.forward(x)
    out, _ = tsafn.forward(x, fused, t_map)
    l_d = nn.mse_loss(out, sgt)[0]
    l_t = nn.mse_loss(t_map, tgt)[0]
    l_e = nn.weighted_bce_loss(fused, egt)[0] + sum(nn.weighted_bce_loss(s, egt)[0] for s in sides)
    expected = nn.combined_finetune_loss(l_d, l_t, l_e, LossWeights())
    _, hist = finetune_joint(toy_samples, cfg, tpn, spn, tsafn)
    assert hist["loss"][0] == expected
    assert hist["l_d"][0] == l_d and hist["l_t"][0] == l_t and hist["l_e"][0] == l_e


def test_finetune_joint_updates_all_three(toy_samples):
    tpn, spn, tsafn = _pretrained_trio(toy_samples, seed=1, steps=10)
    snaps = [params_snapshot(m) for m in (tpn, spn, tsafn)]
    cfg = TrainConfig(steps=2, patch_size=16, batch_size=2, finetune_learning_rate=1e-5, seed=1)
    finetune_joint(toy_samples, cfg, tpn, spn, tsafn)
    for m, snap in zip((tpn, spn, tsafn), snaps):
        changed = any(not np.array_equal(v, snap[k]) for k, v in m.params.values.items())
        assert changed


def test_finetune_joint_toy_drift_bounded(toy_samples):
    # joint loss must not drift up by more than 5% over 200 steps, judged by
    # the median ratio of last to first 50-step window across three seeds
    ratios = []
    for seed in (1, 2, 3):
        tpn, spn, tsafn = _pretrained_trio(toy_samples, seed=seed)
        cfg = TrainConfig(
            steps=200, patch_size=32, batch_size=4, finetune_learning_rate=1e-5, seed=seed
        )
        _, hist = finetune_joint(toy_samples, cfg, tpn, spn, tsafn)
        w = windowed(hist["loss"])
        ratios.append(w[-1] / w[0])
    assert np.median(ratios) <= 1.05, ratios
