"""Central-difference verification of every hand-wired backward.

Each check builds a scalar loss (a fixed random linear functional of the op's
output, or the loss itself), computes analytic gradients via the op's backward,
probes coordinates by central differences in double precision, and reports the
max relative error |a-n| / max(|a|, |n|, 1e-8).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .models import SpnModel, TpnModel, TsafnModel

THRESHOLD = 1e-4
EPS_CONV = 1e-3
EPS_ELEMENTWISE = 1e-5
EPS_LINEAR = 1e-2  # FD is exact on linear maps; a large step just shrinks rounding noise
# network checks need a step well below the smallest |relu pre-activation|,
# otherwise a probe flips a unit mid-difference; seeds below keep that margin
# above 1e-3 (verified at build time)
EPS_NET = 1e-5
TPN_SEED, SPN_SEED, TSAFN_SEED = 111, 118, 1
PROBE_CAP = 96


def max_rel_error(analytic, numeric) -> float:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))


def _probe_coords(shape, rng, cap=PROBE_CAP):
    size = int(np.prod(shape))
    if size <= cap:
        flat = np.arange(size)
    else:
        flat = rng.choice(size, size=cap, replace=False)
    return [np.unravel_index(i, shape) for i in flat]


def fd_gradient(loss_fn, arr, coords, eps) -> np.ndarray:
    """Central differences of loss_fn with respect to arr at the given coords."""
    out = np.empty(len(coords))
    for j, idx in enumerate(coords):
        orig = arr[idx]
        arr[idx] = orig + eps
        lp = loss_fn()
        arr[idx] = orig - eps
        lm = loss_fn()
        arr[idx] = orig
        out[j] = (lp - lm) / (2.0 * eps)
    return out


def _compare(loss_fn, probes, eps, rng, corrupt=False) -> float:
    """probes: list of (array, analytic_grad). Returns worst probed rel error."""
    worst = 0.0
    for arr, grad in probes:
        g = np.asarray(grad, dtype=np.float64)
        if corrupt:
            g = g + 0.05 * (np.abs(g) + 1.0)
        coords = _probe_coords(arr.shape, rng)
        numeric = fd_gradient(loss_fn, arr, coords, eps)
        analytic = np.array([g[idx] for idx in coords])
        worst = max(worst, max_rel_error(analytic, numeric))
    return worst


def check_conv2d(corrupt=False) -> float:
    rng = np.random.default_rng(11)
    worst = 0.0
    for stride in (1, 2):
        x = rng.uniform(-1, 1, (2, 3, 6, 6))
        spec = nn.ConvSpec(3, 3, 4, stride)
        w = rng.uniform(-0.5, 0.5, (4, 3, 3, 3))
        b = rng.uniform(-0.2, 0.2, 4)
        out = nn.conv_forward(x, spec, w, b)
        r = rng.standard_normal(out.shape)
        gx, gw, gb = nn.conv_backward(x, spec, w, r)

        def loss():
            return float(np.sum(nn.conv_forward(x, spec, w, b) * r))

        worst = max(worst, _compare(loss, [(x, gx), (w, gw), (b, gb)], EPS_CONV, rng, corrupt))
    return worst


def check_relu(corrupt=False) -> float:
    rng = np.random.default_rng(12)
    # keep probes away from the kink at 0
    x = rng.uniform(0.05, 1.0, (2, 3, 5, 5)) * rng.choice([-1.0, 1.0], (2, 3, 5, 5))
    r = rng.standard_normal(x.shape)
    g = nn.relu_backward(x, r)
    return _compare(lambda: float(np.sum(nn.relu_forward(x) * r)), [(x, g)], EPS_ELEMENTWISE, rng, corrupt)


def check_sigmoid(corrupt=False) -> float:
    rng = np.random.default_rng(13)
    x = rng.uniform(-2, 2, (2, 3, 5, 5))
    r = rng.standard_normal(x.shape)
    g = nn.sigmoid_backward(nn.sigmoid_forward(x), r)
    return _compare(lambda: float(np.sum(nn.sigmoid_forward(x) * r)), [(x, g)], EPS_ELEMENTWISE, rng, corrupt)


def check_concat(corrupt=False) -> float:
    rng = np.random.default_rng(14)
    a = rng.uniform(-1, 1, (2, 2, 4, 4))
    b = rng.uniform(-1, 1, (2, 3, 4, 4))
    r = rng.standard_normal((2, 5, 4, 4))
    ga, gb = nn.concat_channels_backward(r, [2, 3])
    loss = lambda: float(np.sum(nn.concat_channels([a, b]) * r))
    return _compare(loss, [(a, ga), (b, gb)], EPS_LINEAR, rng, corrupt)


def check_resize(corrupt=False) -> float:
    rng = np.random.default_rng(15)
    worst = 0.0
    x = rng.uniform(-1, 1, (1, 2, 5, 7))
    for oh, ow in ((8, 11), (3, 4), (5, 7)):
        r = rng.standard_normal((1, 2, oh, ow))
        g = nn.resize_tensor_adjoint(r, 5, 7)
        loss = lambda: float(np.sum(nn.resize_tensor(x, oh, ow) * r))
        worst = max(worst, _compare(loss, [(x, g)], EPS_LINEAR, rng, corrupt))
    return worst


def check_mse(corrupt=False) -> float:
    rng = np.random.default_rng(16)
    pred = rng.uniform(0, 1, (2, 3, 4, 4))
    gt = rng.uniform(0, 1, (2, 3, 4, 4))
    _, g = nn.mse_loss(pred, gt)
    return _compare(lambda: nn.mse_loss(pred, gt)[0], [(pred, g)], EPS_ELEMENTWISE, rng, corrupt)


def check_bce(corrupt=False) -> float:
    rng = np.random.default_rng(17)
    pred = rng.uniform(0.2, 0.8, (1, 1, 6, 6))
    gt = (rng.random((1, 1, 6, 6)) < 0.3).astype(np.float64)
    gt[0, 0, 0, 0] = 1.0  # both classes present
    gt[0, 0, 0, 1] = 0.0
    _, g = nn.weighted_bce_loss(pred, gt)
    return _compare(lambda: nn.weighted_bce_loss(pred, gt)[0], [(pred, g)], EPS_ELEMENTWISE, rng, corrupt)


def _network_probes(model, grads, grad_inputs, inputs):
    probes = [(model.params.values[name], grads[name]) for name in model.params.names()]
    probes.extend(zip(inputs, grad_inputs))
    return probes


def check_tpn(corrupt=False) -> float:
    rng = np.random.default_rng(TPN_SEED)
    model = TpnModel.init(rng, dtype=np.float64)
    x = rng.uniform(0.1, 0.9, (1, 3, 8, 8))
    out, cache = model.forward(x)
    r = rng.standard_normal(out.shape)
    grads, gx = model.backward(cache, r)
    loss = lambda: float(np.sum(model.forward(x)[0] * r))
    return _compare(loss, _network_probes(model, grads, [gx], [x]), EPS_NET, rng, corrupt)


def check_spn(corrupt=False) -> float:
    rng = np.random.default_rng(SPN_SEED)
    model = SpnModel.init(rng, dtype=np.float64)
    x = rng.uniform(0.1, 0.9, (1, 3, 8, 8))
    fused, sides, cache = model.forward(x)
    r0 = rng.standard_normal(fused.shape)
    rs = [rng.standard_normal(s.shape) for s in sides]
    grads, gx = model.backward(cache, r0, rs)

    def loss():
        f, s, _ = model.forward(x)
        return float(np.sum(f * r0) + sum(np.sum(si * ri) for si, ri in zip(s, rs)))

    return _compare(loss, _network_probes(model, grads, [gx], [x]), EPS_NET, rng, corrupt)


def check_tsafn(corrupt=False) -> float:
    rng = np.random.default_rng(TSAFN_SEED)
    model = TsafnModel.init(rng, dtype=np.float64)
    i = rng.uniform(0.1, 0.9, (1, 3, 8, 8))
    e = rng.uniform(0.1, 0.9, (1, 1, 8, 8))
    t = rng.uniform(0.1, 0.9, (1, 1, 8, 8))
    out, cache = model.forward(i, e, t)
    r = rng.standard_normal(out.shape)
    grads, (gi, ge, gt) = model.backward(cache, r)
    loss = lambda: float(np.sum(model.forward(i, e, t)[0] * r))
    return _compare(loss, _network_probes(model, grads, [gi, ge, gt], [i, e, t]), EPS_NET, rng, corrupt)


CHECKS = [
    ("conv2d", check_conv2d),
    ("relu", check_relu),
    ("sigmoid", check_sigmoid),
    ("concat_channels", check_concat),
    ("resize_bilinear", check_resize),
    ("mse_loss", check_mse),
    ("weighted_bce_loss", check_bce),
    ("tpn", check_tpn),
    ("spn", check_spn),
    ("tsafn", check_tsafn),
]


@dataclass(frozen=True)
class CheckResult:
    name: str
    error: float
    passed: bool


def run_suite(corrupt: str | None = None) -> list[CheckResult]:
    """Run every check once; corrupt names a check whose analytic grads get
    deliberately perturbed (negative-control fixture)."""
    names = [n for n, _ in CHECKS]
    if corrupt is not None and corrupt not in names:
        raise ValueError(f"unknown check {corrupt!r}; choose from {names}")
    results = []
    for name, fn in CHECKS:
        err = fn(corrupt=(name == corrupt))
        results.append(CheckResult(name, err, err < THRESHOLD))
    return results
