"""Dense primitives.

Every op accepts plain arrays or :class:`Var` inputs. With no ``Var`` among
the inputs the op evaluates directly and returns an ``ndarray``; otherwise the
result is recorded on the inputs' tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import (
    DataError,
    DegenerateBatchError,
    DegenerateVectorError,
    DimensionError,
    LabelError,
)
from .tape import Var

ACTIVATIONS = ("relu", "sigmoid", "identity")


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _val(x):
    return x.value if isinstance(x, Var) else x


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def as_matrix(data, name: str = "matrix") -> np.ndarray:
    """Validate external input as a finite float64 matrix."""
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name}: expected 2-D data, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        r, c = np.argwhere(~np.isfinite(arr))[0]
        raise DataError(f"{name}: non-finite value at row {r}, col {c}")
    return arr


def as_vector(data, name: str = "vector") -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name}: expected 1-D data, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DataError(f"{name}: non-finite value at index {int(np.argmin(np.isfinite(arr)))}")
    return arr


# --- elementwise -----------------------------------------------------------

def add(x, y):
    xv, yv = _val(x), _val(y)
    out = xv + yv
    tape = _tape_of(x, y)
    if tape is None:
        return out
    xs, ys = np.shape(xv), np.shape(yv)
    return tape.record(out, (x, y), lambda g: (_unbroadcast(g, xs), _unbroadcast(g, ys)))


def sub(x, y):
    xv, yv = _val(x), _val(y)
    out = xv - yv
    tape = _tape_of(x, y)
    if tape is None:
        return out
    xs, ys = np.shape(xv), np.shape(yv)
    return tape.record(out, (x, y), lambda g: (_unbroadcast(g, xs), -_unbroadcast(g, ys)))


def neg(x):
    if not isinstance(x, Var):
        return -x
    return x.tape.record(-x.value, (x,), lambda g: (-g,))


def mul(x, y):
    xv, yv = _val(x), _val(y)
    out = xv * yv
    tape = _tape_of(x, y)
    if tape is None:
        return out
    xs, ys = np.shape(xv), np.shape(yv)
    return tape.record(out, (x, y), lambda g: (_unbroadcast(g * yv, xs), _unbroadcast(g * xv, ys)))


def exp(x):
    out = np.exp(_val(x))
    if not isinstance(x, Var):
        return out
    return x.tape.record(out, (x,), lambda g: (g * out,))


def square(x):
    xv = _val(x)
    if not isinstance(x, Var):
        return xv * xv
    return x.tape.record(xv * xv, (x,), lambda g: (2.0 * g * xv,))


def sum(x, axis=None):  # noqa: A001 - mirrors numpy naming
    xv = _val(x)
    out = np.sum(xv, axis=axis)
    if not isinstance(x, Var):
        return out
    shape = xv.shape

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return x.tape.record(out, (x,), vjp)


def mean(x, axis=None):
    n = np.size(_val(x)) if axis is None else np.shape(_val(x))[axis]
    return mul(sum(x, axis=axis), 1.0 / n)


def transpose(x):
    if not isinstance(x, Var):
        return np.transpose(x)
    return x.tape.record(x.value.T, (x,), lambda g: (g.T,))


def activate(x, kind: str):
    """Elementwise relu, sigmoid or identity."""
    if kind == "identity":
        return x
    xv = _val(x)
    if kind == "relu":
        mask = xv > 0
        out = np.where(mask, xv, 0.0)
        if not isinstance(x, Var):
            return out
        return x.tape.record(out, (x,), lambda g: (g * mask,))
    if kind == "sigmoid":
        out = _sigmoid(xv)
        if not isinstance(x, Var):
            return out
        return x.tape.record(out, (x,), lambda g: (g * out * (1.0 - out),))
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def _sigmoid(x):
    # split by sign so exp never overflows
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# --- linear algebra --------------------------------------------------------

def matmul(x, y):
    xv, yv = _val(x), _val(y)
    if np.shape(xv)[-1] != np.shape(yv)[0]:
        raise DimensionError(f"matmul shapes {np.shape(xv)} and {np.shape(yv)} do not align")
    out = xv @ yv
    tape = _tape_of(x, y)
    if tape is None:
        return out

    def vjp(g):
        x2 = xv if xv.ndim == 2 else xv[None, :]
        y2 = yv if yv.ndim == 2 else yv[:, None]
        g2 = g.reshape(x2.shape[0], y2.shape[1])
        gx = (g2 @ y2.T).reshape(xv.shape)
        gy = (x2.T @ g2).reshape(yv.shape)
        return gx, gy

    return tape.record(out, (x, y), vjp)


def linear(x, W, b):
    """Affine map ``W x + b`` applied to a vector or to each row of a batch."""
    xv, Wv, bv = _val(x), _val(W), _val(b)
    if np.ndim(Wv) != 2 or np.shape(bv) != (np.shape(Wv)[0],) or np.shape(xv)[-1] != np.shape(Wv)[1]:
        raise DimensionError(
            f"linear: x {np.shape(xv)}, W {np.shape(Wv)}, b {np.shape(bv)} are incompatible"
        )
    out = xv @ Wv.T + bv
    tape = _tape_of(x, W, b)
    if tape is None:
        return out

    def vjp(g):
        gx = g @ Wv
        if xv.ndim == 1:
            gW = np.outer(g, xv)
            gb = g
        else:
            gW = g.T @ xv
            gb = g.sum(axis=0)
        return gx, gW, gb

    return tape.record(out, (x, W, b), vjp)


def l2_normalize_rows(x, name: str = "input"):
    """Scale each row (or the vector) to unit Euclidean norm."""
    xv = _val(x)
    norms = np.linalg.norm(xv, axis=-1, keepdims=True)
    if np.any(norms == 0):
        idx = int(np.argmin(norms.reshape(-1)))
        raise DegenerateVectorError(f"{name}: zero-norm vector at index {idx}")
    out = xv / norms
    if not isinstance(x, Var):
        return out

    def vjp(g):
        return ((g - out * np.sum(out * g, axis=-1, keepdims=True)) / norms,)

    return x.tape.record(out, (x,), vjp)


# --- probabilistic heads ---------------------------------------------------

def softmax(logits) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    s = np.asarray(_val(logits), dtype=np.float64)
    if s.size == 0 or s.shape[-1] == 0:
        raise DimensionError("softmax of an empty vector")
    z = s - s.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    s = np.asarray(_val(logits), dtype=np.float64)
    z = s - s.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_cross_entropy(logits, labels):
    """Batch-mean negative log-likelihood of integer ``labels`` under softmax(``logits``)."""
    sv = _val(logits)
    if np.ndim(sv) != 2:
        raise DimensionError(f"logits must be B x C, got shape {np.shape(sv)}")
    B, C = sv.shape
    labels = np.asarray(labels)
    if labels.shape != (B,):
        raise DimensionError(f"labels shape {labels.shape} does not match batch size {B}")
    if B == 0:
        raise DimensionError("empty batch")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        bad = int(labels[(labels < 0) | (labels >= C)][0])
        raise LabelError(f"label {bad} outside [0, {C})")
    logp = log_softmax(sv)
    rows = np.arange(B)
    out = -logp[rows, labels].mean()
    out = max(out, 0.0)  # -log p is >= 0; clip round-off
    out = np.float64(out)
    if not isinstance(logits, Var):
        return out

    def vjp(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / B),)

    return logits.tape.record(out, (logits,), vjp)


# --- batch normalisation ---------------------------------------------------

@dataclass
class BatchNormState:
    """Affine parameters and running statistics of one batch-norm layer.

    ``gamma``/``beta`` may be :class:`Var` while a forward pass is being
    recorded. Running statistics are updated in place in train mode.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    epsilon: float = 1e-5
    mode: str = "train"

    @classmethod
    def create(cls, dim: int, momentum: float = 0.9, epsilon: float = 1e-5) -> "BatchNormState":
        return cls(np.ones(dim), np.zeros(dim), np.zeros(dim), np.ones(dim), momentum, epsilon)

    def __post_init__(self):
        if not 0.0 < self.momentum < 1.0:
            raise ValueError("momentum must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {self.mode!r}")
        dims = {np.shape(_val(a)) for a in (self.gamma, self.beta, self.running_mean, self.running_var)}
        if len(dims) != 1:
            raise DimensionError(f"batch-norm vectors disagree in shape: {sorted(dims)}")
        if np.any(np.asarray(self.running_var) < 0):
            raise ValueError("running_var must be non-negative")


def batch_norm(X, state: BatchNormState):
    """Normalise each column of ``X`` then scale by gamma and shift by beta."""
    Xv = _val(X)
    gamma, beta = state.gamma, state.beta
    gv, bv = _val(gamma), _val(beta)
    if np.ndim(Xv) != 2 or Xv.shape[1] != np.shape(gv)[0]:
        raise DimensionError(f"batch_norm input {np.shape(Xv)} vs feature dim {np.shape(gv)}")
    B = Xv.shape[0]

    if state.mode == "train":
        if B < 2:
            raise DegenerateBatchError("train-mode batch norm needs at least 2 rows")
        mu = Xv.mean(axis=0)
        xc = Xv - mu
        var = (xc * xc).mean(axis=0)
        m = state.momentum
        state.running_mean[...] = m * state.running_mean + (1.0 - m) * mu
        state.running_var[...] = m * state.running_var + (1.0 - m) * var
    else:
        xc = Xv - state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = xc * inv_std
    out = xhat * gv + bv

    tape = _tape_of(X, gamma, beta)
    if tape is None:
        return out
    train = state.mode == "train"

    def vjp(g):
        dxhat = g * gv
        if train:
            dX = inv_std / B * (B * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        else:
            dX = dxhat * inv_std
        return dX, (g * xhat).sum(axis=0), g.sum(axis=0)

    return tape.record(out, (X, gamma, beta), vjp)


__all__ = [
    "ACTIVATIONS",
    "BatchNormState",
    "activate",
    "add",
    "as_matrix",
    "as_vector",
    "batch_norm",
    "exp",
    "l2_normalize_rows",
    "linear",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "neg",
    "softmax",
    "softmax_cross_entropy",
    "square",
    "sub",
    "sum",
    "transpose",
]
