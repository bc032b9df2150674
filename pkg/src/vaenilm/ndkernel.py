"""Dense tensor primitives with hand-written backward passes.

Tensors are plain :class:`numpy.ndarray` objects in row-major layout, with the
time axis innermost for 1D signals (``[batch, channels, time]``). Every
operation here comes as a forward function plus a matching ``*_backward``
function; there is no graph-building autodiff engine.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ContractError",
    "EvaluationError",
    "Parameter",
    "as_array",
    "elementwise",
    "elementwise_backward",
    "matmul",
    "matmul_backward",
    "reduce",
    "reduce_backward",
    "numerical_grad",
    "grad_check",
]

GRAD_CHECK_FULL_LIMIT = 10_000
GRAD_CHECK_SUBSET = 512


class ContractError(ValueError):
    """Raised when an operation is called with arguments violating its contract."""


class EvaluationError(ArithmeticError):
    """Raised when a function under test produces a non-finite value."""


def as_array(a, dtype=None):
    arr = np.asarray(a, dtype=dtype)
    if arr.dtype.kind not in "fiub":
        raise ContractError(f"expected a real-valued array, got dtype {arr.dtype}")
    return arr


@dataclass
class Parameter:
    """A learnable tensor together with its accumulated gradient."""

    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ContractError(
                f"grad shape {self.grad.shape} != value shape {self.value.shape} for {self.name!r}"
            )

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def accumulate(self, g):
        if g.shape != self.value.shape:
            raise ContractError(f"gradient shape {g.shape} != {self.value.shape} for {self.name!r}")
        self.grad += g


_ELEMENTWISE = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")


def elementwise(op, a, b):
    """Apply ``add``, ``sub`` or ``mul`` to two arrays of identical shape.

    No broadcasting is performed.
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    a = as_array(a)
    b = as_array(b)
    _check_same_shape(a, b)
    return fn(a, b)


def elementwise_backward(op, a, b, dout):
    """Return ``(da, db)`` for ``elementwise(op, a, b)`` given upstream ``dout``."""
    a = as_array(a)
    b = as_array(b)
    _check_same_shape(a, b)
    _check_same_shape(a, dout)
    if op == "add":
        return dout.copy(), dout.copy()
    if op == "sub":
        return dout.copy(), -dout
    if op == "mul":
        return dout * b, dout * a
    raise ContractError(f"unknown elementwise op {op!r}")


def matmul(a, b):
    a = as_array(a)
    b = as_array(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ContractError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ContractError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def matmul_backward(a, b, dout):
    """Gradients of ``a @ b``: ``dA = dC Bᵀ`` and ``dB = Aᵀ dC``."""
    return dout @ b.T, a.T @ dout


def _check_axis(a, axis):
    if axis is not None and not (-a.ndim <= axis < a.ndim):
        raise ContractError(f"axis {axis} out of range for array of rank {a.ndim}")


def reduce(op, a, axis=None):
    """Sum or mean over one axis, or over all elements when ``axis`` is None."""
    a = as_array(a)
    _check_axis(a, axis)
    if op == "sum":
        return np.sum(a, axis=axis)
    if op == "mean":
        return np.mean(a, axis=axis)
    raise ContractError(f"unknown reduction {op!r}")


def reduce_backward(op, a, dout, axis=None):
    a = as_array(a)
    _check_axis(a, axis)
    dout = np.asarray(dout, dtype=a.dtype if a.dtype.kind == "f" else float)
    if axis is not None:
        dout = np.expand_dims(dout, axis)
    grad = np.broadcast_to(dout, a.shape).copy()
    if op == "sum":
        return grad
    if op == "mean":
        n = a.size if axis is None else a.shape[axis]
        return grad / n
    raise ContractError(f"unknown reduction {op!r}")


def _coordinates(size, max_full, n_subset, seed):
    if size <= max_full:
        return np.arange(size)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(size, size=n_subset, replace=False))


def numerical_grad(f, x, step=1e-4, coords=None):
    """Central-difference gradient of scalar ``f`` at ``x`` on the given flat coordinates.

    ``f`` is called with a perturbed copy of ``x`` and must return a float.
    Coordinates not listed are left at zero.
    """
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    if coords is None:
        coords = range(flat.size)
    for i in coords:
        orig = flat[i]
        flat[i] = orig + step
        fp = float(f(x))
        flat[i] = orig - step
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise EvaluationError(f"non-finite function value at coordinate {i}")
        gflat[i] = (fp - fm) / (2.0 * step)
    return grad


def grad_check(f, x, step=1e-4, seed=0, return_details=False):
    """Compare an analytic gradient against central differences.

    ``f(x)`` must return ``(value, grad)`` with ``grad`` shaped like ``x``.
    Returns the maximum over checked coordinates of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    Tensors above 10⁴ elements are checked on a seeded subset of 512 coordinates.
    """
    if step <= 0:
        raise ContractError("step must be positive")
    x = np.array(x, dtype=np.float64)
    value, analytic = f(x.copy())
    if not np.isfinite(value):
        raise EvaluationError("non-finite function value at the base point")
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise ContractError(f"analytic gradient shape {analytic.shape} != {x.shape}")
    coords = _coordinates(x.size, GRAD_CHECK_FULL_LIMIT, GRAD_CHECK_SUBSET, seed)
    numeric = numerical_grad(lambda v: f(v)[0], x, step=step, coords=coords)
    a = analytic.reshape(-1)[coords]
    n = numeric.reshape(-1)[coords]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    rel = np.abs(a - n) / denom
    err = float(rel.max()) if rel.size else 0.0
    if return_details:
        return err, {"coords": coords, "analytic": a, "numeric": n, "rel": rel}
    return err
