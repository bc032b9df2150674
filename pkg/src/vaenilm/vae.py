"""Variational encoder/decoder network for single-appliance disaggregation.

The encoder stacks ``depth`` IBN blocks, each followed by ×2 max pooling,
and maps the deepest feature map to the mean and log-variance of a Gaussian
latent. The decoder maps a latent sample back to ``[channels, T / 2**depth]``
and runs ``depth`` stages of (×2 deconvolution, concatenation with the
matching encoder feature map, IBN block). A 1×1 convolution and ReLU produce
the non-negative standardized appliance power.
"""

import threading
from dataclasses import asdict, dataclass

import numpy as np

from .layers import (
    DEFAULT_CHANNELS,
    Conv1d,
    Deconv1d,
    Dense,
    IbnBlock,
    Layer,
    concat_channels,
    concat_channels_backward,
    maxpool1d_x2,
    maxpool1d_x2_backward,
    relu,
    relu_backward,
)
from .ndkernel import ContractError

__all__ = [
    "ModelConfig",
    "LatentParams",
    "VaeNilm",
    "reparameterize",
    "reparameterize_backward",
    "kl_divergence",
    "kl_divergence_backward",
    "elbo_loss",
]


@dataclass
class ModelConfig:
    window_len: int = 1024
    depth: int = 7
    latent_dim: int = 16
    channels: tuple = DEFAULT_CHANNELS
    kernel: int = 3
    beta_kl: float = 1.0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 3 or min(self.channels) < 1:
            raise ContractError(f"channel plan must be three positive counts, got {self.channels}")
        if self.depth < 1:
            raise ContractError("depth must be at least 1")
        if self.window_len % (2 ** self.depth):
            raise ContractError(
                f"window_len {self.window_len} is not divisible by 2**depth = {2 ** self.depth}"
            )
        if self.window_len // 2 ** self.depth < 1:
            raise ContractError("window_len too short for the requested depth")
        if self.latent_dim < 1:
            raise ContractError("latent_dim must be >= 1")
        if self.kernel % 2 != 1:
            raise ContractError("kernel width must be odd")
        if self.beta_kl < 0:
            raise ContractError("beta_kl must be nonnegative")

    @property
    def bottleneck_len(self):
        return self.window_len // 2 ** self.depth

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class LatentParams:
    mu: np.ndarray
    logvar: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.logvar.shape:
            raise ContractError(f"mu {self.mu.shape} and logvar {self.logvar.shape} differ")

    @property
    def sigma(self):
        return np.exp(0.5 * self.logvar)


def reparameterize(lat, eps):
    """Latent sample ``z = mu + exp(logvar / 2) * eps``."""
    if eps.shape != lat.mu.shape:
        raise ContractError(f"eps shape {eps.shape} != latent shape {lat.mu.shape}")
    return lat.mu + lat.sigma * eps


def reparameterize_backward(dz, lat, eps):
    """Return ``(dmu, dlogvar)`` for :func:`reparameterize`."""
    return dz, dz * 0.5 * lat.sigma * eps


def kl_divergence(lat):
    """Closed-form KL(N(mu, sigma²) || N(0, I)), summed over latent dims and averaged over batch."""
    per_sample = -0.5 * np.sum(1.0 + lat.logvar - lat.mu ** 2 - np.exp(lat.logvar), axis=1)
    return float(per_sample.mean())


def kl_divergence_backward(lat):
    n = lat.mu.shape[0]
    return lat.mu / n, 0.5 * (np.exp(lat.logvar) - 1.0) / n


def elbo_loss(y_hat, y_true, lat, beta_kl=1.0):
    """Negated ELBO under a unit-variance Gaussian decoder, constants dropped.

    ``loss = mean_batch(sum_t (y_hat - y_true)**2) + beta_kl * KL``.
    Returns ``(loss, dy_hat, dmu, dlogvar)``.
    """
    if y_hat.shape != y_true.shape:
        raise ContractError(f"prediction {y_hat.shape} and target {y_true.shape} differ")
    n = y_hat.shape[0]
    diff = y_hat - y_true
    recon = float(np.sum(diff * diff)) / n
    loss = recon
    dmu = np.zeros_like(lat.mu)
    dlogvar = np.zeros_like(lat.logvar)
    if beta_kl:
        loss += beta_kl * kl_divergence(lat)
        kmu, klv = kl_divergence_backward(lat)
        dmu += beta_kl * kmu
        dlogvar += beta_kl * klv
    return loss, (2.0 / n) * diff, dmu, dlogvar


class VaeNilm(Layer):
    """The full encoder / latent head / decoder network.

    Parameters live on the sub-layers; :meth:`loss_and_backward` fills every
    parameter's ``grad`` for one batch.
    """

    def __init__(self, config=None, seed=0, dtype=np.float32):
        self.config = config = config or ModelConfig()
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        c3 = config.channels[2]
        self.encoder = [
            IbnBlock(1 if i == 0 else c3, config.channels, config.kernel, rng, dtype)
            for i in range(config.depth)
        ]
        flat = c3 * config.bottleneck_len
        self.mu_head = Dense(flat, config.latent_dim, rng, dtype)
        self.logvar_head = Dense(flat, config.latent_dim, rng, dtype)
        self.latent_to_map = Dense(config.latent_dim, flat, rng, dtype)
        self.upsample = [Deconv1d(c3, c3, rng, dtype) for _ in range(config.depth)]
        self.decoder = [
            IbnBlock(2 * c3, config.channels, config.kernel, rng, dtype) for _ in range(config.depth)
        ]
        self.output_head = Conv1d(c3, 1, 1, rng, dtype)
        self._pool_idx = None
        self._bottleneck_shape = None
        self._out_mask = None
        self._splits = []
        self._input_grad = None
        self._lock = threading.Lock()

    # -- encoder ---------------------------------------------------------------

    def _check_input(self, x):
        T = self.config.window_len
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != T:
            raise ContractError(f"expected input of shape [batch, 1, {T}], got {x.shape}")

    def encode(self, x, mode="train"):
        """Return ``(LatentParams, skips)``; skips are ordered shallow to deep."""
        self._check_input(x)
        x = np.asarray(x, dtype=self.dtype)
        h = x
        skips = []
        pool_idx = []
        for block in self.encoder:
            h = block.forward(h, mode)
            skips.append(h)
            h, idx = maxpool1d_x2(h)
            pool_idx.append(idx)
        self._pool_idx = pool_idx
        self._bottleneck_shape = h.shape
        flat = h.reshape(h.shape[0], -1)
        lat = LatentParams(self.mu_head.forward(flat), self.logvar_head.forward(flat))
        return lat, skips

    def encode_backward(self, dmu, dlogvar, dskips):
        dflat = self.mu_head.backward(dmu) + self.logvar_head.backward(dlogvar)
        dh = dflat.reshape(self._bottleneck_shape)
        for i in reversed(range(len(self.encoder))):
            dh = maxpool1d_x2_backward(dh, self._pool_idx[i])
            if dskips[i] is not None:
                dh = dh + dskips[i]
            dh = self.encoder[i].backward(dh)
        return dh

    # -- decoder ---------------------------------------------------------------

    def decode(self, z, skips, mode="train"):
        cfg = self.config
        if len(skips) != cfg.depth:
            raise ContractError(f"expected {cfg.depth} skip tensors, got {len(skips)}")
        n = z.shape[0]
        c3 = cfg.channels[2]
        h = self.latent_to_map.forward(np.asarray(z, dtype=self.dtype))
        h = h.reshape(n, c3, cfg.bottleneck_len)
        self._splits = []
        for s in range(cfg.depth):
            skip = skips[cfg.depth - 1 - s]
            h = self.upsample[s].forward(h)
            if skip.shape != h.shape:
                raise ContractError(f"skip shape {skip.shape} does not match decoder map {h.shape}")
            h, split = concat_channels(h, skip)
            self._splits.append(split)
            h = self.decoder[s].forward(h, mode)
        y, self._out_mask = relu(self.output_head.forward(h))
        return y

    def decode_backward(self, dy):
        """Return ``(dz, dskips)`` with ``dskips`` ordered shallow to deep."""
        cfg = self.config
        d = self.output_head.backward(relu_backward(dy, self._out_mask))
        dskips = [None] * cfg.depth
        for s in reversed(range(cfg.depth)):
            d = self.decoder[s].backward(d)
            d_up, d_skip = concat_channels_backward(d, self._splits[s])
            dskips[cfg.depth - 1 - s] = d_skip
            d = self.upsample[s].backward(d_up)
        dz = self.latent_to_map.backward(d.reshape(d.shape[0], -1))
        return dz, dskips

    # -- full passes -------------------------------------------------------

    def loss_and_backward(self, x, y, eps=None, mode="train", beta_kl=None, backward=True):
        """Forward one batch, compute the ELBO loss and accumulate parameter gradients.

        ``eps=None`` uses ``z = mu``. Gradients are zeroed first.
        """
        beta = self.config.beta_kl if beta_kl is None else beta_kl
        lat, skips = self.encode(x, mode)
        if eps is None:
            z = lat.mu
        else:
            z = reparameterize(lat, np.asarray(eps, dtype=self.dtype))
        y_hat = self.decode(z, skips, mode)
        loss, dy, dmu, dlogvar = elbo_loss(y_hat, np.asarray(y, dtype=self.dtype), lat, beta)
        if not backward:
            return loss
        self.zero_grad()
        dz, dskips = self.decode_backward(dy)
        if eps is None:
            dmu = dmu + dz
        else:
            rmu, rlv = reparameterize_backward(dz, lat, eps)
            dmu = dmu + rmu
            dlogvar = dlogvar + rlv
        self._input_grad = self.encode_backward(dmu, dlogvar, dskips)
        return loss

    def predict(self, x, batch_size=64):
        """Deterministic eval-mode inference with ``z = mu``."""
        self._check_input(x)
        outputs = []
        with self._lock:
            for start in range(0, x.shape[0], batch_size):
                xb = x[start:start + batch_size]
                lat, skips = self.encode(xb, "eval")
                outputs.append(self.decode(lat.mu, skips, "eval"))
        if not outputs:
            return np.zeros((0, 1, self.config.window_len), dtype=self.dtype)
        return np.concatenate(outputs, axis=0)

    # -- state -------------------------------------------------------------

    def state_dict(self):
        state = {name: p.value for name, p in self.named_parameters()}
        state.update(dict(self.named_buffers()))
        return state

    def load_state_dict(self, state):
        targets = {name: p.value for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = set(targets) - set(state)
        extra = set(state) - set(targets)
        if missing or extra:
            raise ContractError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, dst in targets.items():
            src = np.asarray(state[name])
            if src.shape != dst.shape:
                raise ContractError(f"shape mismatch for {name}: {src.shape} vs {dst.shape}")
            dst[...] = src
