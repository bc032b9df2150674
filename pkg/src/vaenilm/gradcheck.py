"""Finite-difference verification of every hand-written backward pass.

:func:`run_suite` returns one :class:`CheckResult` per check. It backs the
``gradcheck`` CLI command and the test-suite.

Parameters whose effect is cancelled exactly by a following normalization
(a convolution bias right before batch norm in train mode, or any
per-channel constant added right before instance norm) have an analytic
gradient of exactly zero. Their central differences are pure rounding
noise, so the relative-error metric is meaningless there; those
coordinates are checked against an absolute bound instead.
"""

import time
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from . import layers as L
from . import vae as _vae
from .ndkernel import (
    elementwise,
    elementwise_backward,
    grad_check,
    matmul,
    matmul_backward,
    numerical_grad,
    reduce,
    reduce_backward,
)
from .vae import ModelConfig, VaeNilm

__all__ = ["CheckResult", "run_suite", "LAYER_TOL", "MODEL_TOL", "STEP"]

STEP = 1e-4
LAYER_TOL = 1e-5
MODEL_TOL = 1e-4
ZERO_GRAD_ANALYTIC_TOL = 1e-10
ZERO_GRAD_NUMERIC_TOL = 1e-7
KINK_MARGIN = 2e-3
MAX_FIXTURE_DRAWS = 200
E2E_BATCH = 4

# Parameter-name suffixes whose gradient is structurally zero in train mode.
STRUCTURALLY_ZERO = (
    "conv1.bias",
    "conv2.bias",
    "conv3.bias",
    "bn3.beta",
    "residual_projection.bias",
)

BN_FED_WEIGHTS = ("conv1.weight", "conv2.weight", "conv3.weight")


@dataclass
class CheckResult:
    name: str
    error: float
    threshold: float
    seconds: float = 0.0

    @property
    def passed(self):
        return bool(self.error < self.threshold)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<34s} max rel err {self.error:.3e}  (< {self.threshold:g})"


def _kernel_error(forward, backward, args, check, rng):
    """Max grad_check error of ``sum(r * forward(*args))`` over the argument indices in ``check``."""
    y, _ = forward(*args)
    r = rng.standard_normal(y.shape)
    worst = 0.0
    for i in check:
        def f(v, i=i):
            a = list(args)
            a[i] = v
            out, cache = forward(*a)
            return float(np.sum(r * out)), backward(r, cache)[i]
        worst = max(worst, grad_check(f, args[i], step=STEP))
    return worst


def _check_conv(rng):
    x = rng.standard_normal((2, 3, 8))
    w = rng.standard_normal((4, 3, 3))
    b = rng.standard_normal(4)
    return _kernel_error(L.conv1d_same, L.conv1d_same_backward, [x, w, b], (0, 1, 2), rng)


def _check_deconv(rng):
    x = rng.standard_normal((2, 3, 5))
    w = rng.standard_normal((4, 3, 2))
    b = rng.standard_normal(4)
    return _kernel_error(L.deconv1d_x2, L.deconv1d_x2_backward, [x, w, b], (0, 1, 2), rng)


def _check_maxpool(rng):
    # pairs separated by >= 0.5 so the step never flips a window's argmax
    base = rng.standard_normal((2, 3, 6))
    x = np.empty((2, 3, 12))
    sign = rng.choice([-1.0, 1.0], size=base.shape)
    x[:, :, 0::2] = base
    x[:, :, 1::2] = base + sign * (0.5 + rng.random(base.shape))
    return _kernel_error(L.maxpool1d_x2, lambda dy, idx: (L.maxpool1d_x2_backward(dy, idx),), [x], (0,), rng)


def _check_batchnorm(rng):
    def forward(x, g, b):
        c = x.shape[1]
        return L.batchnorm1d(x, g, b, np.zeros(c), np.ones(c), mode="train")
    x = rng.standard_normal((3, 2, 5)) * 2.0 + 1.0
    g = rng.standard_normal(2)
    b = rng.standard_normal(2)
    return _kernel_error(forward, L.batchnorm1d_backward, [x, g, b], (0, 1, 2), rng)


def _check_batchnorm_eval(rng):
    rm = rng.standard_normal(2)
    rv = rng.random(2) + 0.5
    def forward(x, g, b):
        return L.batchnorm1d(x, g, b, rm.copy(), rv.copy(), mode="eval")
    x = rng.standard_normal((3, 2, 5))
    return _kernel_error(forward, L.batchnorm1d_backward,
                         [x, rng.standard_normal(2), rng.standard_normal(2)], (0, 1, 2), rng)


def _check_instancenorm(rng):
    x = rng.standard_normal((2, 3, 6)) * 1.5 - 0.5
    g = rng.standard_normal(3)
    b = rng.standard_normal(3)
    return _kernel_error(L.instancenorm1d, L.instancenorm1d_backward, [x, g, b], (0, 1, 2), rng)


def _check_dense(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((4, 5))
    b = rng.standard_normal(5)
    return _kernel_error(L.dense, L.dense_backward, [x, w, b], (0, 1, 2), rng)


def _check_relu_composition(rng):
    # relu(conv(x)) with the pre-activation kept away from the kink
    w = rng.standard_normal((3, 2, 3))
    b = rng.standard_normal(3)
    x = rng.standard_normal((2, 2, 7))

    def forward(x, w, b):
        pre, c1 = L.conv1d_same(x, w, b)
        y, mask = L.relu(pre)
        return y, (c1, mask)

    def backward(dy, cache):
        c1, mask = cache
        return L.conv1d_same_backward(L.relu_backward(dy, mask), c1)

    pre, _ = L.conv1d_same(x, w, b)
    if np.abs(pre).min() < 1e-2:
        b = b + 0.05
    return _kernel_error(forward, backward, [x, w, b], (0, 1, 2), rng)


def _check_primitives(rng):
    worst = 0.0
    a = rng.standard_normal((3, 4))
    bb = rng.standard_normal((3, 4))
    for op in ("add", "sub", "mul"):
        def fwd(a, b, op=op):
            return elementwise(op, a, b), (a, b)
        def bwd(dy, cache, op=op):
            return elementwise_backward(op, cache[0], cache[1], dy)
        worst = max(worst, _kernel_error(fwd, bwd, [a, bb], (0, 1), rng))
    m2 = rng.standard_normal((4, 2))
    worst = max(worst, _kernel_error(lambda a, b: (matmul(a, b), (a, b)),
                                     lambda dy, c: matmul_backward(c[0], c[1], dy),
                                     [a, m2], (0, 1), rng))
    for op in ("sum", "mean"):
        for axis in (None, 0, 1):
            worst = max(worst, _kernel_error(
                lambda a, op=op, axis=axis: (np.asarray(reduce(op, a, axis)), a),
                lambda dy, a, op=op, axis=axis: (reduce_backward(op, a, dy, axis),),
                [a], (0,), rng))
    return worst


def randomize_parameters(model, rng):
    """Overwrite every parameter with seeded random values (gammas kept near 1).

    Non-zero biases keep ReLU pre-activations off exact zeros that zero
    initialization would otherwise produce.
    """
    for name, p in model.named_parameters():
        if name.endswith("gamma"):
            p.value[...] = 1.0 + 0.3 * rng.standard_normal(p.shape)
        elif name.endswith(".bias") or name.endswith("beta"):
            p.value[...] = 0.5 * rng.standard_normal(p.shape)
        elif name.endswith(BN_FED_WEIGHTS):
            # batch norm is scale-invariant in these; unit scale keeps curvature low
            p.value[...] = rng.standard_normal(p.shape)
        else:
            p.value[...] = rng.standard_normal(p.shape) * np.sqrt(1.0 / max(1, p.value[0].size))


def _object_errors(layer, loss_fn, inputs):
    """Check gradients of ``loss_fn()`` with respect to ``inputs`` and every parameter of ``layer``.

    ``loss_fn(x)`` runs forward+backward and returns ``(loss, dx)``; parameter
    grads must be freshly accumulated on each call. Returns ``(max_rel, zero_ok)``.
    """
    buffers = {k: v.copy() for k, v in layer.named_buffers()}

    def restore():
        for k, v in layer.named_buffers():
            v[...] = buffers[k]

    def fx(v):
        restore()
        return loss_fn(v)

    worst = grad_check(fx, inputs, step=STEP)
    zero_ok = True
    for name, p in layer.named_parameters():
        orig = p.value.copy()

        def fp(v, p=p):
            restore()
            p.value[...] = v
            layer.zero_grad()
            loss, _ = loss_fn(inputs)
            return loss, p.grad.copy()

        if name.endswith(STRUCTURALLY_ZERO):
            _, analytic = fp(orig.copy())
            numeric = numerical_grad(lambda v: fp(v)[0], orig, step=STEP)
            zero_ok &= bool(np.abs(analytic).max() <= ZERO_GRAD_ANALYTIC_TOL)
            zero_ok &= bool(np.abs(numeric).max() <= ZERO_GRAD_NUMERIC_TOL)
        else:
            worst = max(worst, grad_check(fp, orig, step=STEP))
        p.value[...] = orig
    restore()
    return worst, zero_ok


@contextmanager
def _kink_margins():
    """Record how close every ReLU input and max-pool pair comes to its kink."""
    margins = []
    relu, pool = L.relu, _vae.maxpool1d_x2

    def recording_relu(x):
        margins.append(float(np.abs(x).min()))
        return relu(x)

    def recording_pool(x):
        # ties between two clipped zeros stay tied under small perturbations
        left, right = x[..., 0::2], x[..., 1::2]
        live = np.maximum(left, right) > 0
        if live.any():
            margins.append(float(np.abs(left - right)[live].min()))
        return pool(x)

    L.relu = _vae.relu = recording_relu
    _vae.maxpool1d_x2 = recording_pool
    try:
        yield margins
    finally:
        L.relu = _vae.relu = relu
        _vae.maxpool1d_x2 = pool


def _smooth_fixture(build, rng):
    """Redraw ``build(rng)`` until its forward pass stays KINK_MARGIN away from every kink."""
    for _ in range(MAX_FIXTURE_DRAWS):
        fixture = build(rng)
        with _kink_margins() as margins:
            fixture["forward"]()
        if min(margins) > KINK_MARGIN:
            return fixture
    raise RuntimeError("could not draw a fixture away from non-smooth points")


def _check_ibn(rng, c_in=2):
    def build(rng):
        block = L.IbnBlock(c_in, channels=(2, 2, 4), rng=rng, dtype=np.float64)
        randomize_parameters(block, rng)
        x = rng.standard_normal((2, c_in, 8))
        return {"block": block, "x": x, "forward": lambda: block.forward(x, "train")}

    fx = _smooth_fixture(build, rng)
    block, x = fx["block"], fx["x"]
    r = rng.standard_normal((2, 4, 8))

    def loss_fn(v):
        block.zero_grad()
        out = block.forward(v, "train")
        return float(np.sum(r * out)), block.backward(r)

    worst, zero_ok = _object_errors(block, loss_fn, x)
    return worst if zero_ok else np.inf


def tiny_model(seed=0):
    """Double-precision depth-2, T=8 model with channel plan (2, 2, 4)."""
    rng = np.random.default_rng(seed)
    cfg = ModelConfig(window_len=8, depth=2, latent_dim=3, channels=(2, 2, 4), beta_kl=1.0)
    model = VaeNilm(cfg, seed=seed, dtype=np.float64)
    randomize_parameters(model, rng)
    return model


def _check_end_to_end(rng):
    def build(rng):
        model = tiny_model(int(rng.integers(1 << 31)))
        x = rng.standard_normal((E2E_BATCH, 1, 8))
        y = rng.random((E2E_BATCH, 1, 8))
        eps = rng.standard_normal((E2E_BATCH, 3))
        fwd = lambda: model.loss_and_backward(x, y, eps, backward=False)
        return {"model": model, "x": x, "y": y, "eps": eps, "forward": fwd}

    fx = _smooth_fixture(build, rng)
    model, x, y, eps = fx["model"], fx["x"], fx["y"], fx["eps"]

    def loss_fn(v):
        # input gradient: rerun the backward chain to recover dL/dx
        loss = model.loss_and_backward(v, y, eps, mode="train")
        return loss, model._input_grad

    worst, zero_ok = _object_errors(model, loss_fn, x)
    return worst if zero_ok else np.inf


CHECKS = [
    ("ndkernel primitives", _check_primitives, LAYER_TOL),
    ("conv1d_same", _check_conv, LAYER_TOL),
    ("deconv1d_x2", _check_deconv, LAYER_TOL),
    ("maxpool1d_x2", _check_maxpool, LAYER_TOL),
    ("batchnorm1d (train)", _check_batchnorm, LAYER_TOL),
    ("batchnorm1d (eval)", _check_batchnorm_eval, LAYER_TOL),
    ("instancenorm1d", _check_instancenorm, LAYER_TOL),
    ("dense", _check_dense, LAYER_TOL),
    ("relu composition", _check_relu_composition, LAYER_TOL),
    ("ibn block (projected residual)", lambda rng: _check_ibn(rng, 2), LAYER_TOL),
    ("ibn block (identity residual)", lambda rng: _check_ibn(rng, 4), LAYER_TOL),
    ("end-to-end encode/decode/elbo", _check_end_to_end, MODEL_TOL),
]


def run_suite(seed=0, checks=None):
    """Run the gradient checks in double precision and return the results.

    ``checks`` optionally restricts the run to the named entries of ``CHECKS``.
    """
    results = []
    for i, (name, fn, tol) in enumerate(CHECKS):
        if checks and name not in checks:
            continue
        rng = np.random.default_rng([seed, i])  # same inputs whether run alone or in the suite
        t0 = time.perf_counter()
        err = float(fn(rng))
        results.append(CheckResult(name, err, tol, time.perf_counter() - t0))
    return results
