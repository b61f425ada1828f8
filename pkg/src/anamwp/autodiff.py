"""Dense float64 tensors with tape-based reverse-mode differentiation.

All differentiable state lives in `Tensor` objects wrapping numpy arrays.
Operations executed while a `Tape` is active record backward closures on
that tape; calling `Tape.backward(loss)` replays them in reverse and
accumulates gradients into `.grad`. With no active tape the same
functions run as plain forward numpy code, which is the evaluation path.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "ShapeError",
    "NonFiniteError",
    "set_finite_checks",
    "zero_grads",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "tanh",
    "sigmoid",
    "log_sigmoid",
    "reshape",
    "concat",
    "stack",
    "take_rows",
    "tensor_sum",
    "mean",
    "dropout",
    "masked_softmax",
    "masked_xent",
    "finite_diff_check",
]


class ShapeError(ValueError):
    """Raised when operands of a primitive have incompatible shapes."""


class NonFiniteError(ArithmeticError):
    """Raised when a primitive produces NaN or infinity."""


_CHECK_FINITE = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle per-operation NaN/inf detection (on by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


_ACTIVE_TAPE = None


class Tensor:
    """A float64 ndarray plus a gradient slot of the same shape."""

    __slots__ = ("data", "grad", "_tape")

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    # Convenience wrappers so expressions read naturally.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self):
        return mean(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"


class Parameter(Tensor):
    """A named, trainable tensor. Optimizers update `.data` in place."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = ""):
        super().__init__(data)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.data.shape})"


class Tape:
    """Records one forward pass; single-use backward.

    Usage::

        with Tape() as tape:
            loss = f(params)
        tape.backward(loss)
    """

    def __init__(self):
        self._nodes = []
        self._spent = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def backward(self, loss: Tensor) -> None:
        if self._spent:
            raise RuntimeError("backward() already called on this tape")
        if loss.data.size != 1:
            raise ShapeError(f"backward: loss must be scalar, got shape {loss.data.shape}")
        if loss._tape is not self:
            raise RuntimeError("backward: loss was not produced under this tape")
        self._spent = True
        loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            node()


def active_tape():
    return _ACTIVE_TAPE


def zero_grads(params) -> None:
    for p in params:
        p.grad = np.zeros_like(p.data)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _finish(out: Tensor, opname: str) -> Tensor:
    if _CHECK_FINITE and not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"{opname}: produced non-finite values")
    if _ACTIVE_TAPE is not None:
        out._tape = _ACTIVE_TAPE
    return out


def _record(backward_fn) -> None:
    if _ACTIVE_TAPE is not None:
        _ACTIVE_TAPE._nodes.append(backward_fn)


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        if g.shape == t.data.shape:
            t.grad = g.copy()
        else:
            t.grad = np.zeros_like(t.data)
            t.grad += g
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}") from None
    _finish(out, "add")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    _record(backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} and {b.data.shape}") from None
    _finish(out, "sub")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    _record(backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}") from None
    _finish(out, "mul")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    _record(backward)
    return out


def neg(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(-a.data)
    _finish(out, "neg")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, -g)

    _record(backward)
    return out


def matmul(a, b) -> Tensor:
    """2D @ 2D, or batched 3D @ 2D (shared right operand)."""
    a, b = _as_tensor(a), _as_tensor(b)
    ad, bd = a.data, b.data
    if bd.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2D, got {bd.shape}")
    if ad.ndim not in (2, 3):
        raise ShapeError(f"matmul: left operand must be 2D or 3D, got {ad.shape}")
    if ad.shape[-1] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = Tensor(ad @ bd)
    _finish(out, "matmul")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g @ bd.T)
        if ad.ndim == 2:
            _accum(b, ad.T @ g)
        else:
            k, n = bd.shape
            _accum(b, ad.reshape(-1, k).T @ g.reshape(-1, n))

    _record(backward)
    return out


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(np.tanh(a.data))
    _finish(out, "tanh")
    y = out.data

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g * (1.0 - y * y))

    _record(backward)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(_sigmoid(a.data))
    _finish(out, "sigmoid")
    y = out.data

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g * y * (1.0 - y))

    _record(backward)
    return out


def log_sigmoid(a) -> Tensor:
    """log(sigmoid(x)), computed stably as min(x,0) - log1p(exp(-|x|))."""
    a = _as_tensor(a)
    x = a.data
    out = Tensor(np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x))))
    _finish(out, "log_sigmoid")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g * _sigmoid(-x))

    _record(backward)
    return out


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        out = Tensor(a.data.reshape(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.data.shape} to {shape}") from None
    _finish(out, "reshape")
    orig = a.data.shape

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g.reshape(orig))

    _record(backward)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    try:
        out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[t.data.shape for t in ts]} on axis {axis}"
        ) from None
    _finish(out, "concat")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def backward():
        g = out.grad
        if g is None:
            return
        for t, piece in zip(ts, np.split(g, splits, axis=axis)):
            _accum(t, piece)

    _record(backward)
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    ts = [_as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("stack: need at least one tensor")
    shapes = {t.data.shape for t in ts}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ: {sorted(shapes)}")
    out = Tensor(np.stack([t.data for t in ts], axis=axis))
    _finish(out, "stack")

    def backward():
        g = out.grad
        if g is None:
            return
        for i, t in enumerate(ts):
            _accum(t, np.take(g, i, axis=axis))

    _record(backward)
    return out


def take_rows(a, indices) -> Tensor:
    """Gather rows of a 2D tensor; rows may repeat."""
    a = _as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows: expected 2D table, got {a.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ShapeError(f"take_rows: indices must be 1D, got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"take_rows: index out of range for table with {a.data.shape[0]} rows")
    out = Tensor(a.data[idx])
    _finish(out, "take_rows")

    def backward():
        g = out.grad
        if g is None:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    _record(backward)
    return out


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    _finish(out, "sum")
    shape = a.data.shape

    def backward():
        g = out.grad
        if g is None:
            return
        if axis is None:
            _accum(a, np.broadcast_to(g, shape).copy() if g.shape != shape else g)
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, shape))

    _record(backward)
    return out


def mean(a) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size
    if n == 0:
        raise ShapeError("mean: empty tensor")
    out = Tensor(a.data.mean())
    _finish(out, "mean")
    shape = a.data.shape

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, np.broadcast_to(g / n, shape))

    _record(backward)
    return out


def dropout(a, p: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    """Inverted dropout: zero entries with probability p, scale rest by 1/(1-p).

    Identity when training is False or p == 0 (no rng draw in either case).
    """
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout: p must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(np.float64) / (1.0 - p)
    out = Tensor(a.data * keep)
    _finish(out, "dropout")

    def backward():
        g = out.grad
        if g is None:
            return
        _accum(a, g * keep)

    _record(backward)
    return out


def _masked_logits(x: np.ndarray, mask) -> np.ndarray:
    m = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not m.any(axis=-1).all():
        raise ShapeError("masked_softmax: a row has no allowed entries")
    return np.where(m, x, -np.inf)


def masked_softmax(a, mask) -> Tensor:
    """Softmax over the last axis; disallowed entries get exactly zero."""
    a = _as_tensor(a)
    z = _masked_logits(a.data, mask)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p)
    _finish(out, "masked_softmax")

    def backward():
        g = out.grad
        if g is None:
            return
        dot = (g * p).sum(axis=-1, keepdims=True)
        _accum(a, p * (g - dot))

    _record(backward)
    return out


def masked_xent(logits, mask, targets) -> Tensor:
    """Per-row cross-entropy of a masked softmax against integer targets.

    logits: (B, V); mask: bool broadcastable to (B, V); targets: (B,) ints.
    Returns the (B,) vector of -log p[target]. A target that the mask
    disallows is a data bug and raises.
    """
    logits = _as_tensor(logits)
    x = logits.data
    if x.ndim != 2:
        raise ShapeError(f"masked_xent: logits must be 2D, got {x.shape}")
    t = np.asarray(targets, dtype=np.intp)
    if t.shape != (x.shape[0],):
        raise ShapeError(f"masked_xent: targets shape {t.shape} does not match batch {x.shape[0]}")
    z = _masked_logits(x, mask)
    rows = np.arange(x.shape[0])
    if np.any(np.isneginf(z[rows, t])):
        bad = int(rows[np.isneginf(z[rows, t])][0])
        raise ShapeError(f"masked_xent: target token is masked out in row {bad}")
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    lse = zmax[:, 0] + np.log(e.sum(axis=-1))
    out = Tensor(lse - z[rows, t])
    _finish(out, "masked_xent")
    p = e / e.sum(axis=-1, keepdims=True)

    def backward():
        g = out.grad
        if g is None:
            return
        d = p * g[:, None]
        d[rows, t] -= g
        _accum(logits, d)

    _record(backward)
    return out


def finite_diff_check(f, params, eps: float = 1e-5) -> float:
    """Max relative error between tape gradients of f() and central differences.

    f must be a deterministic closure over `params` returning a scalar
    Tensor. Relative error uses max(1, |analytic|) in the denominator.
    """
    params = list(params)
    zero_grads(params)
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    grads = [p.grad.copy() for p in params]

    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = f().item()
            flat[i] = orig - eps
            f_minus = f().item()
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NonFiniteError("finite_diff_check: f evaluated to a non-finite value")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            rel = abs(gflat[i] - numeric) / max(1.0, abs(gflat[i]))
            if rel > worst:
                worst = rel
    return worst
