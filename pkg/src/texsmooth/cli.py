"""Command line entry points.

Subcommands: gen, train, smooth, eval, enhance, gradcheck. Flag precedence is
explicit flag > --config JSON value > built-in default, and every run writes an
effective_config.json with the fully resolved values next to its main output.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import gradcheck as gc
from .dataset import load_dataset, write_dataset
from .imagecore import Image, clamp01
from .metrics import format_psnr, mse_metric, psnr_from_mse, ssim
from .models import ABLATION_MODES, load_models, save_models, smooth
from .nn import LossWeights, TrainConfig
from .pngio import read_image, write_image
from .texgen import BlendConfig, DegeneratePatternError, extract_texture_pattern, generate_sample
from .training import finetune_joint, train_spn, train_tpn, train_tsafn

log = logging.getLogger("texsmooth")

SEED_MAX = 2**63 - 1


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(defaults: dict, config: dict, args: argparse.Namespace) -> dict:
    """defaults <- config file <- explicit flags (flags parse with default=None)."""
    out = dict(defaults)
    for k in config:
        if k not in defaults:
            raise ValueError(f"unknown config key {k!r}")
        out[k] = config[k]
    for k in defaults:
        v = getattr(args, k, None)
        if v is not None:
            out[k] = v
    return out


def _write_effective_config(directory, command: str, resolved: dict) -> None:
    os.makedirs(directory or ".", exist_ok=True)
    payload = {"command": command}
    payload.update(resolved)
    with open(os.path.join(directory or ".", "effective_config.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _list_pngs(directory) -> list:
    if not os.path.isdir(directory):
        raise FileNotFoundError(f"not a directory: {directory}")
    return sorted(f for f in os.listdir(directory) if f.lower().endswith(".png"))


# ---------------------------------------------------------------- gen


def cmd_gen(args) -> int:
    defaults = {
        "structures": args.structures,
        "textures": args.textures,
        "out": None,
        "count": 100,
        "seed": 0,
        "kappa": 0.75,
        "gt_mode": "remapped",
    }
    cfg = _resolve(defaults, _load_config_file(args.config), args)
    if cfg["out"] is None:
        raise ValueError("gen needs an output directory (--out)")
    if cfg["count"] < 1:
        raise ValueError("count must be >= 1")

    struct_files = _list_pngs(cfg["structures"])
    texture_files = _list_pngs(cfg["textures"])
    if not struct_files:
        raise ValueError(f"no PNG structure images in {cfg['structures']}")
    structures = [read_image(os.path.join(cfg["structures"], f)) for f in struct_files]

    patterns, kept_textures = [], []
    for f in texture_files:
        try:
            patterns.append(extract_texture_pattern(read_image(os.path.join(cfg["textures"], f))))
            kept_textures.append(f)
        except DegeneratePatternError as exc:
            log.warning("skipping degenerate texture %s: %s", f, exc)
    if not patterns:
        raise ValueError(f"no usable texture images in {cfg['textures']}")

    blend_cfg = BlendConfig(kappa=float(cfg["kappa"]), gt_mode=cfg["gt_mode"])
    count = int(cfg["count"])
    master = np.random.default_rng(int(cfg["seed"]))
    sample_seeds = master.integers(SEED_MAX, size=count)
    struct_idx = master.integers(len(structures), size=count)

    def build(i: int):
        return generate_sample(structures[struct_idx[i]], patterns, int(sample_seeds[i]), blend_cfg)

    workers = max(1, int(os.environ.get("TEXSMOOTH_THREADS", "1")))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            samples = list(pool.map(build, range(count)))
    else:
        samples = [build(i) for i in range(count)]

    extra = {
        "seed": int(cfg["seed"]),
        "kappa": float(cfg["kappa"]),
        "gt_mode": cfg["gt_mode"],
        "structure_files": struct_files,
        "texture_files": kept_textures,
        "structure_assignment": [int(i) for i in struct_idx],
    }
    write_dataset(cfg["out"], samples, extra=extra)
    _write_effective_config(cfg["out"], "gen", cfg)
    print(f"wrote {count} samples to {cfg['out']}")
    return 0


# ---------------------------------------------------------------- train

TRAIN_DEFAULTS = {
    "steps": 500,
    "batch_size": 16,
    "patch_size": 64,
    "learning_rate": 1e-4,
    "momentum": 0.9,
    "finetune_learning_rate": 1e-5,
    "seed": 0,
    "gamma": 0.6,
    "lam": 0.2,
    "ablation": "double",
}

_PREREQS = {"none": (), "texture_only": ("tpn",), "structure_only": ("spn",), "double": ("tpn", "spn")}


def _write_loss_csv(path, history: dict) -> None:
    keys = list(history)
    n = len(history[keys[0]])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step"] + keys)
        for i in range(n):
            w.writerow([i] + [f"{history[k][i]:.10g}" for k in keys])


def cmd_train(args) -> int:
    defaults = dict(TRAIN_DEFAULTS)
    defaults.update({"dataset": args.dataset, "which": args.which, "out": "models"})
    cfg = _resolve(defaults, _load_config_file(args.config), args)
    which = cfg["which"]

    train_cfg = TrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        momentum=float(cfg["momentum"]),
        finetune_learning_rate=float(cfg["finetune_learning_rate"]),
        patch_size=int(cfg["patch_size"]),
        batch_size=int(cfg["batch_size"]),
        steps=int(cfg["steps"]),
        seed=int(cfg["seed"]),
    )
    ds = load_dataset(cfg["dataset"])
    samples = ds.subset("train")
    out_dir = cfg["out"]

    if which == "tpn":
        model, losses = train_tpn(samples, train_cfg)
        save_models(out_dir, {"tpn": model})
        history = {"loss": losses}
    elif which == "spn":
        model, losses = train_spn(samples, train_cfg)
        save_models(out_dir, {"spn": model})
        history = {"loss": losses}
    elif which == "tsafn":
        ablation = cfg["ablation"]
        if ablation not in ABLATION_MODES:
            raise ValueError(f"ablation must be one of {ABLATION_MODES}, got {ablation!r}")
        pre = load_models(out_dir, _PREREQS[ablation])
        model, losses = train_tsafn(
            samples, train_cfg, tpn=pre.get("tpn"), spn=pre.get("spn"), ablation=ablation
        )
        save_models(out_dir, {"tsafn": model})
        history = {"loss": losses}
    elif which == "joint":
        nets = load_models(out_dir, ("tpn", "spn", "tsafn"))
        weights = LossWeights(gamma=float(cfg["gamma"]), lam=float(cfg["lam"]))
        _, history = finetune_joint(
            samples, train_cfg, nets["tpn"], nets["spn"], nets["tsafn"], weights
        )
        save_models(out_dir, nets)
    else:
        raise ValueError(f"unknown training target {which!r}")

    _write_loss_csv(os.path.join(out_dir, f"loss_{which}.csv"), history)
    _write_effective_config(out_dir, "train", cfg)
    final = history["loss"][-1] if history["loss"] else float("nan")
    print(f"trained {which} for {train_cfg.steps} steps, final loss {final:.6g}")
    return 0


# ---------------------------------------------------------------- smooth


def _default_out(input_path, suffix: str) -> str:
    stem, _ = os.path.splitext(input_path)
    return stem + suffix


def cmd_smooth(args) -> int:
    defaults = {
        "input": args.input,
        "models": "models",
        "out": None,
        "ablation": "double",
        "emit_guidance": False,
    }
    cfg = _resolve(defaults, _load_config_file(args.config), args)
    if cfg["out"] is None:
        cfg["out"] = _default_out(cfg["input"], "_smooth.png")
    if cfg["ablation"] not in ABLATION_MODES:
        raise ValueError(f"ablation must be one of {ABLATION_MODES}, got {cfg['ablation']!r}")

    roles = ("tsafn",) + _PREREQS[cfg["ablation"]]
    nets = load_models(cfg["models"], roles)
    img = read_image(cfg["input"])
    result = smooth(img, nets, ablation=cfg["ablation"])
    write_image(cfg["out"], result.output)
    if cfg["emit_guidance"]:
        stem, _ = os.path.splitext(cfg["out"])
        write_image(stem + "_texture.png", result.texture)
        write_image(stem + "_structure.png", result.structure)
    _write_effective_config(os.path.dirname(cfg["out"]), "smooth", cfg)
    print(f"wrote {cfg['out']}")
    return 0


# ---------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    defaults = {"pred": args.pred, "gt": args.gt, "out": None}
    cfg = _resolve(defaults, _load_config_file(args.config), args)

    pred_files = set(_list_pngs(cfg["pred"]))
    gt_files = set(_list_pngs(cfg["gt"]))
    matched = sorted(pred_files & gt_files)
    warnings = 0
    for name in sorted(pred_files - gt_files):
        log.warning("no ground truth for %s, excluded", name)
        warnings += 1
    for name in sorted(gt_files - pred_files):
        log.warning("no prediction for %s, excluded", name)
        warnings += 1

    rows = []
    mses, psnrs, ssims = [], [], []
    for name in matched:
        p = read_image(os.path.join(cfg["pred"], name))
        g = read_image(os.path.join(cfg["gt"], name))
        m = mse_metric(p, g)
        pv = psnr_from_mse(m)
        sv = ssim(p, g)
        mses.append(m)
        psnrs.append(pv)
        ssims.append(sv)
        rows.append([os.path.splitext(name)[0], f"{m:.10g}", f"{format_psnr(pv):.6f}", f"{sv:.10g}"])
    if matched:
        rows.append(
            [
                "mean",
                f"{float(np.mean(mses)):.10g}",
                f"{format_psnr(float(np.mean(psnrs))):.6f}",
                f"{float(np.mean(ssims)):.10g}",
            ]
        )

    header = ["sample_id", "mse", "psnr_db", "ssim"]
    if cfg["out"]:
        with open(cfg["out"], "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            w.writerows(rows)
        _write_effective_config(os.path.dirname(cfg["out"]), "eval", cfg)
        print(f"wrote {cfg['out']} ({len(matched)} pairs, {warnings} warnings)")
    else:
        # streaming to stdout: no output directory, so no config sidecar
        w = csv.writer(sys.stdout)
        w.writerow(header)
        w.writerows(rows)
    return 0


# ---------------------------------------------------------------- enhance


def cmd_enhance(args) -> int:
    defaults = {"input": args.input, "models": "models", "out": None, "alpha": 2.0, "ablation": "double"}
    cfg = _resolve(defaults, _load_config_file(args.config), args)
    alpha = float(cfg["alpha"])
    if alpha < 1.0:
        raise ValueError(f"alpha must be >= 1, got {alpha}")
    if cfg["out"] is None:
        cfg["out"] = _default_out(cfg["input"], "_enhanced.png")

    roles = ("tsafn",) + _PREREQS[cfg["ablation"]]
    nets = load_models(cfg["models"], roles)
    img = read_image(cfg["input"])
    s = smooth(img, nets, ablation=cfg["ablation"]).output
    # I + (alpha-1)(I-S) == S + alpha(I-S); this form is exact at alpha=1
    detail = img.data - s.data
    out = Image(clamp01(img.data + np.float32(alpha - 1.0) * detail))
    write_image(cfg["out"], out)
    _write_effective_config(os.path.dirname(cfg["out"]), "enhance", cfg)
    print(f"wrote {cfg['out']}")
    return 0


# ---------------------------------------------------------------- gradcheck


def cmd_gradcheck(args) -> int:
    defaults = {"out": ".", "corrupt": None}
    cfg = _resolve(defaults, _load_config_file(args.config), args)
    results = gc.run_suite(corrupt=cfg["corrupt"])
    failed = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<20s} max_rel_error {r.error:.3e}  {status}")
        failed += 0 if r.passed else 1
    _write_effective_config(cfg["out"], "gradcheck", cfg)
    if failed:
        print(f"{failed} component(s) failed (threshold {gc.THRESHOLD:g})")
        return 1
    print(f"all {len(results)} components passed (threshold {gc.THRESHOLD:g})")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="texsmooth", description="Texture-aware image smoothing toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--seed", type=int, default=None, help="RNG seed")
        sp.add_argument("--config", default=None, help="JSON config file with defaults")
        sp.add_argument("--out", default=None, help="output path")

    g = sub.add_parser("gen", help="generate a blended training dataset")
    g.add_argument("structures", help="directory of structure-only PNGs")
    g.add_argument("textures", help="directory of texture source PNGs")
    g.add_argument("--count", type=int, default=None)
    g.add_argument("--kappa", type=float, default=None)
    g.add_argument("--gt-mode", dest="gt_mode", choices=("literal", "remapped"), default=None)
    common(g)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", help="train one network or fine-tune jointly")
    t.add_argument("dataset", help="dataset directory from gen")
    t.add_argument("which", choices=("tpn", "spn", "tsafn", "joint"))
    t.add_argument("--steps", type=int, default=None)
    t.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    t.add_argument("--patch-size", dest="patch_size", type=int, default=None)
    t.add_argument("--lr", dest="learning_rate", type=float, default=None)
    t.add_argument("--momentum", type=float, default=None)
    t.add_argument("--finetune-lr", dest="finetune_learning_rate", type=float, default=None)
    t.add_argument("--gamma", type=float, default=None)
    t.add_argument("--lam", type=float, default=None)
    t.add_argument("--ablation", choices=ABLATION_MODES, default=None)
    common(t)
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("smooth", help="smooth an image with trained models")
    s.add_argument("input", help="input PNG")
    s.add_argument("--models", default=None, help="models directory")
    s.add_argument("--ablation", choices=ABLATION_MODES, default=None)
    s.add_argument("--emit-guidance", dest="emit_guidance", action="store_true", default=None)
    common(s)
    s.set_defaults(func=cmd_smooth)

    e = sub.add_parser("eval", help="compare predictions against ground truth")
    e.add_argument("pred", help="directory of predicted PNGs")
    e.add_argument("gt", help="directory of ground-truth PNGs")
    common(e)
    e.set_defaults(func=cmd_eval)

    n = sub.add_parser("enhance", help="detail enhancement via the smoothed base layer")
    n.add_argument("input", help="input PNG")
    n.add_argument("--models", default=None, help="models directory")
    n.add_argument("--alpha", type=float, default=None, help="detail gain, >= 1")
    n.add_argument("--ablation", choices=ABLATION_MODES, default=None)
    common(n)
    n.set_defaults(func=cmd_enhance)

    c = sub.add_parser("gradcheck", help="finite-difference check of every backward pass")
    c.add_argument("--corrupt", default=None, help="component name to corrupt (negative control)")
    common(c)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
