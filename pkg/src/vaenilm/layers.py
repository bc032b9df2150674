"""1D neural layers with explicit forward/backward passes.

Each kernel is a pair ``f(x, ...) -> (y, cache)`` and
``f_backward(dy, cache) -> gradients``. The :class:`Layer` subclasses wrap
those kernels together with their :class:`~vaenilm.ndkernel.Parameter`
objects so that a network can be trained by calling ``forward`` then
``backward`` and reading ``.grad`` off every parameter.

All signal tensors are laid out as ``[batch, channels, time]``.
"""

import numpy as np

from .ndkernel import ContractError, Parameter

__all__ = [
    "DEFAULT_CHANNELS",
    "conv1d_same",
    "conv1d_same_backward",
    "deconv1d_x2",
    "deconv1d_x2_backward",
    "maxpool1d_x2",
    "maxpool1d_x2_backward",
    "batchnorm1d",
    "batchnorm1d_backward",
    "instancenorm1d",
    "instancenorm1d_backward",
    "relu",
    "relu_backward",
    "dense",
    "dense_backward",
    "concat_channels",
    "concat_channels_backward",
    "Layer",
    "Conv1d",
    "Deconv1d",
    "BatchNorm1d",
    "InstanceNorm1d",
    "Dense",
    "IbnBlock",
    "he_normal",
]

DEFAULT_CHANNELS = (64, 64, 256)
BN_MOMENTUM = 0.1
NORM_EPS = 1e-5


def _require_3d(x, what="input"):
    if x.ndim != 3:
        raise ContractError(f"{what} must be [batch, channels, time], got shape {x.shape}")


# ----------------------------------------------------------------------------
# Convolutions


def conv1d_same(x, weight, bias):
    """Cross-correlation with zero padding that preserves the time extent.

    ``weight`` is ``[c_out, c_in, k]`` with ``k`` odd and ``bias`` is ``[c_out]``.
    """
    _require_3d(x)
    c_out, c_in, k = weight.shape
    if x.shape[1] != c_in:
        raise ContractError(f"conv expects {c_in} input channels, got {x.shape[1]}")
    if k % 2 != 1:
        raise ContractError(f"same-padding convolution needs an odd kernel width, got {k}")
    if bias.shape != (c_out,):
        raise ContractError(f"bias shape {bias.shape} != ({c_out},)")
    n, _, t = x.shape
    pad = (k - 1) // 2
    if k == 1:
        cols = x
    else:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
        cols = np.concatenate([xp[:, :, j:j + t] for j in range(k)], axis=1)
    # column index j * c_in + i  <->  weight[:, i, j]
    w2 = weight.transpose(0, 2, 1).reshape(c_out, k * c_in)
    y = np.matmul(w2, cols)
    y += bias[None, :, None]
    return y, (cols, w2, weight.shape, x.shape)


def conv1d_same_backward(dy, cache):
    """Return ``(dx, dweight, dbias)``."""
    cols, w2, wshape, xshape = cache
    c_out, c_in, k = wshape
    n, _, t = xshape
    db = dy.sum(axis=(0, 2))
    dw2 = np.tensordot(dy, cols, axes=([0, 2], [0, 2]))
    dw = dw2.reshape(c_out, k, c_in).transpose(0, 2, 1)
    dcols = np.matmul(w2.T, dy)
    if k == 1:
        return dcols, np.ascontiguousarray(dw), db
    pad = (k - 1) // 2
    dxp = np.zeros((n, c_in, t + 2 * pad), dtype=dy.dtype)
    for j in range(k):
        dxp[:, :, j:j + t] += dcols[:, j * c_in:(j + 1) * c_in]
    return dxp[:, :, pad:pad + t].copy(), np.ascontiguousarray(dw), db


def deconv1d_x2(x, weight, bias):
    """Transposed convolution with kernel width 2 and stride 2 (exact ×2 upsampling).

    ``out[b, o, 2t + j] = sum_i weight[o, i, j] * x[b, i, t] + bias[o]``.
    """
    _require_3d(x)
    c_out, c_in, k = weight.shape
    if k != 2:
        raise ContractError(f"deconv1d_x2 needs kernel width 2, got {k}")
    if x.shape[1] != c_in:
        raise ContractError(f"deconv expects {c_in} input channels, got {x.shape[1]}")
    n, _, t = x.shape
    y = np.empty((n, c_out, 2 * t), dtype=np.result_type(x, weight))
    for j in range(2):
        y[:, :, j::2] = np.matmul(weight[:, :, j], x)
    y += bias[None, :, None]
    return y, (x, weight)


def deconv1d_x2_backward(dy, cache):
    x, weight = cache
    dw = np.empty_like(weight)
    dx = np.zeros_like(x, dtype=dy.dtype)
    for j in range(2):
        dyj = dy[:, :, j::2]
        dw[:, :, j] = np.tensordot(dyj, x, axes=([0, 2], [0, 2]))
        dx += np.matmul(weight[:, :, j].T, dyj)
    return dx, dw, dy.sum(axis=(0, 2))


# ----------------------------------------------------------------------------
# Pooling, activation, dense, concat


def maxpool1d_x2(x):
    """Non-overlapping width-2 max pooling along time.

    Returns ``(y, argmax)`` where ``argmax`` holds time indices into ``x``.
    Ties resolve to the earlier sample.
    """
    _require_3d(x)
    if x.shape[2] % 2:
        raise ContractError(f"maxpool1d_x2 needs an even time extent, got {x.shape[2]}")
    left = x[:, :, 0::2]
    right = x[:, :, 1::2]
    take_left = left >= right
    y = np.where(take_left, left, right)
    argmax = 2 * np.arange(y.shape[2]) + (~take_left)
    return y, argmax


def maxpool1d_x2_backward(dy, argmax):
    n, c, half = dy.shape
    dx = np.zeros((n, c, 2 * half), dtype=dy.dtype)
    np.put_along_axis(dx, argmax, dy, axis=2)
    return dx


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def dense(x, weight, bias):
    """Affine map ``x @ weight + bias`` for ``x`` of shape ``[batch, n_in]``."""
    if x.ndim != 2 or weight.ndim != 2:
        raise ContractError(f"dense expects 2-D input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[0]:
        raise ContractError(f"dense input width {x.shape[1]} != weight rows {weight.shape[0]}")
    if bias.shape != (weight.shape[1],):
        raise ContractError(f"bias shape {bias.shape} != ({weight.shape[1]},)")
    return x @ weight + bias, (x, weight)


def dense_backward(dy, cache):
    x, weight = cache
    return dy @ weight.T, x.T @ dy, dy.sum(axis=0)


def concat_channels(a, b):
    _require_3d(a, "first operand")
    _require_3d(b, "second operand")
    if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[2]:
        raise ContractError(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_channels_backward(dy, split):
    return dy[:, :split], dy[:, split:]


# ----------------------------------------------------------------------------
# Normalization


def _normalize(x, axes, eps):
    mean = x.mean(axis=axes, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=axes, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    return centered * inv_std, mean, var, inv_std


def _normalize_backward(dxhat, xhat, inv_std, axes):
    m = 1
    for ax in axes:
        m *= dxhat.shape[ax]
    s1 = dxhat.sum(axis=axes, keepdims=True)
    s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
    return inv_std * (dxhat - s1 / m - xhat * (s2 / m))


def batchnorm1d(x, gamma, beta, running_mean, running_var, mode="train",
                momentum=BN_MOMENTUM, eps=NORM_EPS):
    """Per-channel batch normalization over (batch, time).

    In train mode the running statistics are updated in place using the
    (biased) batch statistics. Returns ``(y, cache)``.
    """
    _require_3d(x)
    g = gamma[None, :, None]
    if mode == "train":
        if x.shape[0] * x.shape[2] < 2:
            raise ContractError("batchnorm in train mode needs batch*time >= 2")
        xhat, mean, var, inv_std = _normalize(x, (0, 2), eps)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(-1)
    elif mode == "eval":
        inv_std = (1.0 / np.sqrt(running_var + eps))[None, :, None]
        xhat = (x - running_mean[None, :, None]) * inv_std
    else:
        raise ContractError(f"unknown mode {mode!r}")
    y = g * xhat + beta[None, :, None]
    return y, (mode, xhat, inv_std, gamma)


def batchnorm1d_backward(dy, cache):
    """Return ``(dx, dgamma, dbeta)``."""
    mode, xhat, inv_std, gamma = cache
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dxhat = dy * gamma[None, :, None]
    if mode == "train":
        dx = _normalize_backward(dxhat, xhat, inv_std, (0, 2))
    else:
        dx = dxhat * inv_std
    return dx, dgamma, dbeta


def instancenorm1d(x, gamma, beta, eps=NORM_EPS):
    """Normalize every (sample, channel) slice over time, then apply gamma/beta."""
    _require_3d(x)
    if x.shape[2] < 2:
        raise ContractError("instance norm needs at least two time steps")
    xhat, _, _, inv_std = _normalize(x, (2,), eps)
    y = gamma[None, :, None] * xhat + beta[None, :, None]
    return y, (xhat, inv_std, gamma)


def instancenorm1d_backward(dy, cache):
    xhat, inv_std, gamma = cache
    dgamma = (dy * xhat).sum(axis=(0, 2))
    dbeta = dy.sum(axis=(0, 2))
    dx = _normalize_backward(dy * gamma[None, :, None], xhat, inv_std, (2,))
    return dx, dgamma, dbeta


# ----------------------------------------------------------------------------
# Layer objects


def he_normal(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


class Layer:
    """Base class providing parameter and buffer traversal."""

    _buffers = ()

    def _children(self):
        for name, value in list(vars(self).items()):
            if isinstance(value, Layer):
                yield name, value
            elif isinstance(value, list) and value and isinstance(value[0], Layer):
                for i, child in enumerate(value):
                    yield f"{name}.{i}", child

    def named_parameters(self, prefix=""):
        for name, value in list(vars(self).items()):
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def named_buffers(self, prefix=""):
        for name in self._buffers:
            yield prefix + name, getattr(self, name)
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()


class Conv1d(Layer):
    def __init__(self, c_in, c_out, kernel=3, rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Parameter(he_normal(rng, (c_out, c_in, kernel), c_in * kernel, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = conv1d_same(x, self.weight.value, self.bias.value)
        return y

    def backward(self, dy):
        dx, dw, db = conv1d_same_backward(dy, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        return dx


class Deconv1d(Layer):
    def __init__(self, c_in, c_out, rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Parameter(he_normal(rng, (c_out, c_in, 2), c_in, dtype))
        self.bias = Parameter(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = deconv1d_x2(x, self.weight.value, self.bias.value)
        return y

    def backward(self, dy):
        dx, dw, db = deconv1d_x2_backward(dy, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        return dx


class BatchNorm1d(Layer):
    _buffers = ("running_mean", "running_var")

    def __init__(self, channels, momentum=BN_MOMENTUM, eps=NORM_EPS, dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = batchnorm1d(
            x, self.gamma.value, self.beta.value, self.running_mean, self.running_var,
            mode=mode, momentum=self.momentum, eps=self.eps,
        )
        return y

    def backward(self, dy):
        dx, dg, db = batchnorm1d_backward(dy, self._cache)
        self.gamma.accumulate(dg)
        self.beta.accumulate(db)
        return dx


class InstanceNorm1d(Layer):
    def __init__(self, channels, eps=NORM_EPS, dtype=np.float32):
        self.gamma = Parameter(np.ones(channels, dtype=dtype))
        self.beta = Parameter(np.zeros(channels, dtype=dtype))
        self.eps = eps
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = instancenorm1d(x, self.gamma.value, self.beta.value, self.eps)
        return y

    def backward(self, dy):
        dx, dg, db = instancenorm1d_backward(dy, self._cache)
        self.gamma.accumulate(dg)
        self.beta.accumulate(db)
        return dx


class Dense(Layer):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        self.weight = Parameter(he_normal(rng, (n_in, n_out), n_in, dtype))
        self.bias = Parameter(np.zeros(n_out, dtype=dtype))
        self._cache = None

    def forward(self, x, mode="train"):
        y, self._cache = dense(x, self.weight.value, self.bias.value)
        return y

    def backward(self, dy):
        dx, dw, db = dense_backward(dy, self._cache)
        self.weight.accumulate(dw)
        self.bias.accumulate(db)
        return dx


class IbnBlock(Layer):
    """Residual block of three conv/batch-norm stages joined by instance norm.

    Main path ``conv1 -> bn1 -> relu -> conv2 -> bn2 -> relu -> conv3 -> bn3``
    is summed with the (optionally 1×1-projected) block input; the sum goes
    through instance normalization and a final ReLU.
    """

    def __init__(self, c_in, channels=DEFAULT_CHANNELS, kernel=3, rng=None, dtype=np.float32):
        rng = np.random.default_rng() if rng is None else rng
        c1, c2, c3 = channels
        self.c_in = c_in
        self.c_out = c3
        self.conv1 = Conv1d(c_in, c1, kernel, rng, dtype)
        self.bn1 = BatchNorm1d(c1, dtype=dtype)
        self.conv2 = Conv1d(c1, c2, kernel, rng, dtype)
        self.bn2 = BatchNorm1d(c2, dtype=dtype)
        self.conv3 = Conv1d(c2, c3, kernel, rng, dtype)
        self.bn3 = BatchNorm1d(c3, dtype=dtype)
        self.instance_norm = InstanceNorm1d(c3, dtype=dtype)
        self.residual_projection = Conv1d(c_in, c3, 1, rng, dtype) if c_in != c3 else None
        self._masks = None

    def forward(self, x, mode="train"):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ContractError(f"IBN block expects {self.c_in} input channels, got shape {x.shape}")
        h = self.bn1.forward(self.conv1.forward(x), mode)
        h, m1 = relu(h)
        h = self.bn2.forward(self.conv2.forward(h), mode)
        h, m2 = relu(h)
        h = self.bn3.forward(self.conv3.forward(h), mode)
        res = x if self.residual_projection is None else self.residual_projection.forward(x)
        out, m3 = relu(self.instance_norm.forward(h + res))
        self._masks = (m1, m2, m3)
        return out

    def backward(self, dy):
        m1, m2, m3 = self._masks
        ds = self.instance_norm.backward(relu_backward(dy, m3))
        if self.residual_projection is None:
            dx = ds.copy()
        else:
            dx = self.residual_projection.backward(ds)
        d = self.conv3.backward(self.bn3.backward(ds))
        d = self.conv2.backward(self.bn2.backward(relu_backward(d, m2)))
        d = self.conv1.backward(self.bn1.backward(relu_backward(d, m1)))
        return dx + d
