"""RMSProp training loop with learning-rate halving, early stopping and
best-weight restoration."""

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import ModelCheckpoint, atomic_write
from .ndkernel import ContractError

__all__ = [
    "NumericalError",
    "TrainConfig",
    "RmsPropState",
    "TrainLog",
    "EarlyStopping",
    "lr_schedule",
    "rmsprop_step",
    "train",
]

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    lr0: float = 0.001
    lr_halving: bool = True
    max_epochs: int = 100
    patience: int = 20
    batch_size: int = 32
    beta_kl: float = 1.0
    seed: int = 0
    plateau: bool = False
    plateau_patience: int = 3
    decay: float = 0.9
    epsilon: float = 1e-8

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ContractError("lr0 must be positive")
        if self.max_epochs < 1:
            raise ContractError("max_epochs must be >= 1")
        if not 0 < self.patience <= self.max_epochs:
            raise ContractError("patience must lie in [1, max_epochs]")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")

    def to_dict(self):
        return asdict(self)


def lr_schedule(epoch, lr0=0.001, halving=True):
    """``lr0 * 0.5**epoch`` when halving, else ``lr0``."""
    if epoch < 0:
        raise ContractError("epoch must be nonnegative")
    return lr0 * 0.5 ** epoch if halving else lr0


class RmsPropState:
    """Per-parameter running mean of squared gradients."""

    def __init__(self, params, decay=0.9, epsilon=1e-8):
        self.decay = decay
        self.epsilon = epsilon
        self.mean_square = {id(p): np.zeros_like(p.value) for p in params}

    def __getitem__(self, param):
        return self.mean_square[id(param)]


def rmsprop_step(param, state, lr):
    """In-place update ``v <- d*v + (1-d)*g²;  theta <- theta - lr*g/(sqrt(v)+eps)``."""
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite gradient in parameter {param.name or '<unnamed>'}")
    v = state[param]
    v *= state.decay
    v += (1.0 - state.decay) * g * g
    param.value -= (lr * g / (np.sqrt(v) + state.epsilon)).astype(param.value.dtype, copy=False)


@dataclass
class TrainLog:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self):
        return len(self.val_loss)

    def write_csv(self, path, include_time=False):
        """Per-epoch CSV. ``seconds`` is left blank unless ``include_time``, so reruns stay byte-identical."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_loss", "lr", "seconds"])
        for e in range(self.epochs):
            secs = f"{self.seconds[e]:.3f}" if include_time else ""
            w.writerow([e, repr(self.train_loss[e]), repr(self.val_loss[e]), repr(self.lr[e]), secs])
        atomic_write(path, buf.getvalue(), mode="w")


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` epochs without improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = -1

    def update(self, epoch, val_loss):
        """Record one epoch. Returns ``(improved, stop)``."""
        if val_loss < self.best:
            self.best = val_loss
            self.best_epoch = epoch
            return True, False
        return False, epoch - self.best_epoch >= self.patience


def _evaluate(model, ws, batch_size, beta_kl):
    total = 0.0
    for start in range(0, len(ws), batch_size):
        xb = ws.inputs[start:start + batch_size]
        yb = ws.targets[start:start + batch_size]
        total += model.loss_and_backward(xb, yb, None, mode="eval", beta_kl=beta_kl, backward=False) * len(xb)
    return total / len(ws)


def train(model, train_ws, val_ws, cfg, stats=None, appliance=None, on_epoch=None):
    """Fit ``model`` in place; return ``(ModelCheckpoint, TrainLog)``.

    ``model`` needs ``loss_and_backward``, ``named_parameters``, ``state_dict``
    and ``load_state_dict`` (see :class:`vaenilm.vae.VaeNilm`). The latent is
    sampled during training and set to its mean for validation. On return the
    model holds the weights of the best validation epoch. ``on_epoch(epoch,
    log)`` runs after every epoch; a truthy return ends training early.
    """
    if len(train_ws) == 0:
        raise ContractError("training set is empty")
    if len(val_ws) == 0:
        raise ContractError("validation set is empty")
    rng = np.random.default_rng(cfg.seed)
    params = [p for _, p in model.named_parameters()]
    for name, p in model.named_parameters():
        p.name = p.name or name
    state = RmsPropState(params, cfg.decay, cfg.epsilon)
    stopper = EarlyStopping(cfg.patience)
    tlog = TrainLog()
    best_state = None
    latent_dim = model.config.latent_dim
    lr = cfg.lr0
    since_improved = 0

    for epoch in range(cfg.max_epochs):
        t0 = time.perf_counter()
        if not cfg.plateau:
            lr = lr_schedule(epoch, cfg.lr0, cfg.lr_halving)
        order = rng.permutation(len(train_ws))
        running = 0.0
        seen = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2 and len(order) >= 2:
                continue  # batch norm needs more than one window
            xb = train_ws.inputs[idx]
            yb = train_ws.targets[idx]
            eps = rng.standard_normal((len(idx), latent_dim)).astype(xb.dtype)
            loss = model.loss_and_backward(xb, yb, eps, mode="train", beta_kl=cfg.beta_kl)
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            for p in params:
                rmsprop_step(p, state, lr)
            running += loss * len(idx)
            seen += len(idx)
        val = _evaluate(model, val_ws, max(cfg.batch_size, 64), cfg.beta_kl)
        if not np.isfinite(val):
            raise NumericalError(f"non-finite validation loss at epoch {epoch}")
        tlog.train_loss.append(running / max(seen, 1))
        tlog.val_loss.append(float(val))
        tlog.lr.append(lr)
        tlog.seconds.append(time.perf_counter() - t0)
        improved, stop = stopper.update(epoch, val)
        if improved:
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
            since_improved = 0
        else:
            since_improved += 1
            if cfg.plateau and since_improved % cfg.plateau_patience == 0:
                lr *= 0.5
        log.info("epoch %d  train %.5g  val %.5g  lr %.3g", epoch, tlog.train_loss[-1], val, lr)
        if on_epoch is not None and on_epoch(epoch, tlog):
            stop = True
        if stop:
            break

    tlog.best_epoch = stopper.best_epoch
    model.load_state_dict(best_state)
    return ModelCheckpoint.from_model(model, stats, appliance, seed=cfg.seed), tlog
