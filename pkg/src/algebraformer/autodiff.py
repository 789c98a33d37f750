"""Reverse-mode autodiff over dense float64 tensors.

Exactly the op set the transformer forward pass needs, nothing more. A Tape
records operations in topological order during the forward pass; backward
replays them in exact reverse order, summing adjoints into per-node slots.
Tapes are single-use: a second backward on the same tape raises instead of
silently doubling gradients. Ops applied to tensors that are not attached to
any tape run as plain numpy (inference path).
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)

_nan_check = False


def set_nan_check(enabled: bool) -> None:
    """Debug hook: raise on non-finite op outputs."""
    global _nan_check
    _nan_check = bool(enabled)


class ShapeMismatchError(ValueError):
    pass


class TapeConsumedError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape=None, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"


class Tape:
    """Ordered record of ops; every node's inputs precede it."""

    def __init__(self):
        self._inputs: list[tuple[int, ...]] = []
        self._backs: list = []
        self._grads: dict[int, np.ndarray] = {}
        self._consumed = False

    def watch(self, value) -> Tensor:
        """Register a leaf whose gradient should be tracked."""
        data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)
        node = self._record((), None)
        return Tensor(data, self, node)

    def _record(self, inputs: tuple[int, ...], back) -> int:
        self._inputs.append(inputs)
        self._backs.append(back)
        return len(self._backs) - 1

    def backward(self, loss: Tensor) -> None:
        if self._consumed:
            raise TapeConsumedError("backward already ran on this tape; rebuild the forward pass")
        self._consumed = True
        if loss.tape is not self or loss.node is None:
            raise ValueError("loss tensor does not belong to this tape")
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        grads = self._grads
        grads[loss.node] = np.ones_like(loss.data)
        for nid in range(loss.node, -1, -1):
            g = grads.get(nid)
            if g is None or self._backs[nid] is None:
                continue
            for in_id, contrib in self._backs[nid](g):
                if in_id in grads:
                    grads[in_id] = grads[in_id] + contrib
                else:
                    grads[in_id] = contrib

    def grad(self, t: Tensor) -> np.ndarray | None:
        if t.tape is not self:
            raise ValueError("tensor does not belong to this tape")
        return self._grads.get(t.node)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and tape is not t.tape:
                raise ValueError("inputs come from different tapes")
            tape = t.tape
    return tape


def _emit(tape, data, pairs) -> Tensor:
    """Create the output tensor, recording a node when a tape is active.

    `pairs` is a list of (input tensor, adjoint function); adjoints for
    inputs that are not tape-tracked are dropped.
    """
    if _nan_check and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite values produced by an op")
    if tape is None:
        return Tensor(data)
    tracked = [(t.node, fn) for t, fn in pairs if t.tape is tape and t.node is not None]

    def back(g):
        return [(nid, fn(g)) for nid, fn in tracked]

    node = tape._record(tuple(nid for nid, _ in tracked), back)
    return Tensor(data, tape, node)


def _sum_to(shape, g):
    """Reduce an adjoint to a broadcast operand's shape (suffix broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


def matmul(a, b) -> Tensor:
    """Matrix product; leading batch dims must match, or b may be 2-D (shared)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs >= 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeMismatchError(f"batch dimensions differ: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    a_data, b_data = a.data, b.data

    def back_a(g):
        return g @ np.swapaxes(b_data, -1, -2)

    def back_b(g):
        gb = np.swapaxes(a_data, -1, -2) @ g
        return _sum_to(b_data.shape, gb)

    return _emit(_tape_of(a, b), data, [(a, back_a), (b, back_b)])


def add(a, b) -> Tensor:
    """Elementwise sum; b's shape must equal a's or be a trailing suffix of it."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[len(a.shape) - len(b.shape) :] != b.shape:
        raise ShapeMismatchError(f"cannot add {b.shape} onto {a.shape}")
    b_shape = b.shape
    return _emit(
        _tape_of(a, b),
        a.data + b.data,
        [(a, lambda g: g), (b, lambda g: _sum_to(b_shape, g))],
    )


def mul_scalar(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit(_tape_of(a), a.data * c, [(a, lambda g: g * c)])


def transpose_last(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim < 2:
        raise ShapeMismatchError("transpose_last needs >= 2-D input")
    return _emit(
        _tape_of(a),
        np.swapaxes(a.data, -1, -2),
        [(a, lambda g: np.swapaxes(g, -1, -2))],
    )


def split_heads(a, n_heads: int) -> Tensor:
    """(batch, tokens, d) -> (batch, heads, tokens, d // heads)."""
    a = _as_tensor(a)
    if a.ndim != 3:
        raise ShapeMismatchError(f"split_heads expects 3-D input, got {a.shape}")
    B, T, d = a.shape
    if d % n_heads != 0:
        raise ShapeMismatchError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    data = a.data.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)

    def back(g):
        return g.transpose(0, 2, 1, 3).reshape(B, T, d)

    return _emit(_tape_of(a), np.ascontiguousarray(data), [(a, back)])


def merge_heads(a) -> Tensor:
    """(batch, heads, tokens, dh) -> (batch, tokens, heads * dh)."""
    a = _as_tensor(a)
    if a.ndim != 4:
        raise ShapeMismatchError(f"merge_heads expects 4-D input, got {a.shape}")
    B, H, T, dh = a.shape
    data = a.data.transpose(0, 2, 1, 3).reshape(B, T, H * dh)

    def back(g):
        return g.reshape(B, T, H, dh).transpose(0, 2, 1, 3)

    return _emit(_tape_of(a), np.ascontiguousarray(data), [(a, back)])


def squeeze_last(a) -> Tensor:
    """Drop a trailing axis of size 1."""
    a = _as_tensor(a)
    if a.shape[-1] != 1:
        raise ShapeMismatchError(f"last axis must have size 1, got {a.shape}")
    shape = a.shape
    return _emit(
        _tape_of(a),
        a.data.reshape(shape[:-1]),
        [(a, lambda g: g.reshape(shape))],
    )


def take_rows(a, count: int) -> Tensor:
    """First `count` rows of a 2-D tensor (used to trim positional tables)."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeMismatchError(f"take_rows expects 2-D input, got {a.shape}")
    if not 0 < count <= a.shape[0]:
        raise ShapeMismatchError(f"cannot take {count} rows from {a.shape}")
    full_rows = a.shape[0]

    def back(g):
        out = np.zeros((full_rows,) + g.shape[1:])
        out[:count] = g
        return out

    return _emit(_tape_of(a), a.data[:count].copy(), [(a, back)])


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatchError(
            f"gain/bias shapes {gain.shape}/{bias.shape} do not match feature axis of {x.shape}"
        )
    if eps <= 0:
        raise ValueError("eps must be > 0")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    data = xhat * gain.data + bias.data
    gain_data = gain.data

    def back_x(g):
        dxhat = g * gain_data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return (dxhat - m1 - xhat * m2) * inv_std

    def back_gain(g):
        return _sum_to(gain_data.shape, g * xhat)

    def back_bias(g):
        return _sum_to(gain_data.shape, g)

    return _emit(
        _tape_of(x, gain, bias), data, [(x, back_x), (gain, back_gain), (bias, back_bias)]
    )


def softmax_last_axis(x) -> Tensor:
    x = _as_tensor(x)
    if x.shape[-1] == 0:
        raise ShapeMismatchError("softmax needs a nonempty last axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    return _emit(_tape_of(x), y, [(x, back)])


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return phi + x * np.exp(-0.5 * x * x) * _INV_SQRT2PI


def gelu(x) -> Tensor:
    """Exact Gaussian-CDF form x * Phi(x)."""
    x = _as_tensor(x)
    x_data = x.data
    data = x_data * 0.5 * (1.0 + erf(x_data * _INV_SQRT2))
    return _emit(_tape_of(x), data, [(x, lambda g: g * _gelu_grad(x_data))])


def mse_loss(pred, target) -> Tensor:
    """Per-sample sum of squared errors over the last axis, averaged over the rest."""
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"shapes differ: {pred.shape} vs {target.shape}")
    batch = int(np.prod(pred.shape[:-1])) if pred.ndim > 1 else 1
    diff = pred.data - target.data
    data = np.array((diff**2).sum() / batch)

    def back_pred(g):
        return g * 2.0 * diff / batch

    def back_target(g):
        return g * (-2.0) * diff / batch

    return _emit(_tape_of(pred, target), data, [(pred, back_pred), (target, back_target)])


def gradcheck(f, x, step: float = 1e-6) -> float:
    """Max relative error between tape gradient and central differences.

    f must map one tensor to a scalar tensor. Relative error per coordinate
    is |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-8).
    """
    x = np.asarray(x, dtype=np.float64)
    tape = Tape()
    xt = tape.watch(x)
    out = f(xt)
    tape.backward(out)
    g_ad = tape.grad(xt)
    if g_ad is None:
        g_ad = np.zeros_like(x)
    g_fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += step
        fp = float(f(Tensor(xp)).data)
        xm = x.copy()
        xm[idx] -= step
        fm = float(f(Tensor(xm)).data)
        g_fd[idx] = (fp - fm) / (2.0 * step)
    rel = np.abs(g_ad - g_fd) / (np.abs(g_ad) + np.abs(g_fd) + 1e-8)
    return float(rel.max())
