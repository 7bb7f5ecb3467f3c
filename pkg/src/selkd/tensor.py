"""Reverse-mode differentiable arrays.

A Tensor wraps a float64 ndarray. While a Tape is active, every op whose
inputs require grad appends a node (inputs, output, vjp closure) to it;
backward() replays the nodes in reverse and accumulates into .grad, so a
value used in several branches sums its contributions. Tapes are rebuilt
every training step; there is no persistent graph.

Forward ops are overflow-safe on finite inputs (softmax and log_softmax
subtract the row max before exponentiating).
"""

from __future__ import annotations

import numpy as np

from .backend import kernels
from .errors import ContractError, ShapeError

_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of ops; topological by construction."""

    def __init__(self):
        self.nodes = []
        self._on_tape = set()

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()

    def record(self, inputs, output, vjp, needs):
        self.nodes.append((inputs, output, vjp, needs))
        self._on_tape.add(id(output))

    def holds(self, t: "Tensor") -> bool:
        return id(t) in self._on_tape


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def relu(self):
        return relu(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(inputs, out_data, vjp) -> Tensor:
    """Build the output tensor, recording on the active tape if needed.

    The vjp receives (output grad, needs) where needs[i] says whether
    input i wants a gradient; it may return None in the other slots.
    """
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=track)
    if track:
        tape.record(inputs, out, vjp, tuple(t.requires_grad for t in inputs))
    return out


def _sum_to_shape(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# -- elementwise / structural ops ---------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def vjp(g, needs):
        return (
            _sum_to_shape(g, a.shape) if needs[0] else None,
            _sum_to_shape(g, b.shape) if needs[1] else None,
        )

    return _record((a, b), out, vjp)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record((a,), -a.data, lambda g, needs: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def vjp(g, needs):
        return (
            _sum_to_shape(g * b.data, a.shape) if needs[0] else None,
            _sum_to_shape(g * a.data, b.shape) if needs[1] else None,
        )

    return _record((a, b), out, vjp)


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0.0
    return _record((a,), np.where(mask, a.data, 0.0), lambda g, needs: (g * mask,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    return _record((a,), a.data.reshape(shape), lambda g, needs: (g.reshape(orig),))


def transpose(a, axes=()) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes) or tuple(reversed(range(a.data.ndim)))
    inv = tuple(int(i) for i in np.argsort(axes))
    return _record((a,), a.data.transpose(axes), lambda g, needs: (g.transpose(inv),))


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.shape

    def vjp(g, needs):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        ax = axis if isinstance(axis, tuple) else (axis,)
        gg = g
        if not keepdims:
            for d in sorted(d % len(shape) for d in ax):
                gg = np.expand_dims(gg, d)
        return (np.broadcast_to(gg, shape).copy(),)

    return _record((a,), out, vjp)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod(
        [a.shape[d] for d in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / float(n))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")

    if a.data.ndim > 2 and b.data.ndim == 2:
        # linear-layer case: fold leading axes into one GEMM
        k, n = b.shape
        a2 = a.data.reshape(-1, k)
        out = (a2 @ b.data).reshape(a.shape[:-1] + (n,))

        def vjp(g, needs):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape) if needs[0] else None
            gb = a2.T @ g2 if needs[1] else None
            return ga, gb

        return _record((a, b), out, vjp)

    out = a.data @ b.data

    def vjp(g, needs):
        ga = _sum_to_shape(g @ np.swapaxes(b.data, -1, -2), a.shape) if needs[0] else None
        gb = _sum_to_shape(np.swapaxes(a.data, -1, -2) @ g, b.shape) if needs[1] else None
        return ga, gb

    return _record((a, b), out, vjp)


# -- row kernels (backend-dispatched) ------------------------------------


def _rows(x: np.ndarray):
    """View (..., d) as (n, d) plus a restorer for the original shape."""
    d = x.shape[-1]
    return np.ascontiguousarray(x.reshape(-1, d)), x.shape


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"log_softmax needs a non-empty last dimension, got {x.shape}")
    flat, shape = _rows(x.data)
    out_flat = kernels.log_softmax_fwd(flat)
    out = out_flat.reshape(shape)

    def vjp(g, needs):
        gflat = kernels.log_softmax_bwd(out_flat, np.ascontiguousarray(g.reshape(out_flat.shape)))
        return (gflat.reshape(shape),)

    return _record((x,), out, vjp)


def softmax(x) -> Tensor:
    x = as_tensor(x)
    if x.data.ndim < 1 or x.shape[-1] < 1:
        raise ShapeError(f"softmax needs a non-empty last dimension, got {x.shape}")
    flat, shape = _rows(x.data)
    s_flat = kernels.softmax_fwd(flat)

    def vjp(g, needs):
        gflat = kernels.softmax_bwd(s_flat, np.ascontiguousarray(g.reshape(s_flat.shape)))
        return (gflat.reshape(shape),)

    return _record((x,), s_flat.reshape(shape), vjp)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Per-row standardization over the last axis, then affine gain/bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    d = x.shape[-1]
    if d < 1:
        raise ShapeError(f"layer_norm needs a non-empty last dimension, got {x.shape}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape}/{bias.shape}"
        )
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    flat, shape = _rows(x.data)
    y_flat, xhat, inv_std = kernels.layer_norm_fwd(flat, gain.data, bias.data, eps)

    def vjp(g, needs):
        gflat = np.ascontiguousarray(g.reshape(y_flat.shape))
        gx, ggain, gbias = kernels.layer_norm_bwd(gflat, xhat, inv_std, gain.data)
        return gx.reshape(shape), ggain, gbias

    return _record((x, gain, bias), y_flat.reshape(shape), vjp)


def embedding_lookup(table, ids) -> Tensor:
    """Gather rows of table by integer ids; backward scatter-adds."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ContractError("embedding ids must be integers")
    vocab = table.shape[0]
    bad = (ids < 0) | (ids >= vocab)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IndexError(
            f"embedding id {int(ids[pos])} out of range [0, {vocab}) at position {pos}"
        )
    out = table.data[ids]
    ids_flat = np.ascontiguousarray(ids.reshape(-1).astype(np.int64))
    d = table.shape[1]

    def vjp(g, needs):
        gt = np.zeros_like(table.data)
        kernels.embedding_scatter_add_(gt, ids_flat, np.ascontiguousarray(g.reshape(-1, d)))
        return (gt,)

    return _record((table,), out, vjp)


def gather_last(x, ids) -> Tensor:
    """Pick x[..., ids[...]] along the last axis (one index per row)."""
    x = as_tensor(x)
    ids = np.asarray(ids)
    v = x.shape[-1]
    bad = (ids < 0) | (ids >= v)
    if bad.any():
        pos = tuple(int(i) for i in np.argwhere(bad)[0])
        raise IndexError(f"gather id {int(ids[pos])} out of range [0, {v}) at position {pos}")
    idx = ids[..., None]
    out = np.take_along_axis(x.data, idx, axis=-1)[..., 0]

    def vjp(g, needs):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, g[..., None], axis=-1)
        return (gx,)

    return _record((x,), out, vjp)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. rng=None means evaluation mode (identity)."""
    if rng is None or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


# -- reverse pass ---------------------------------------------------------


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every tensor on the tape."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.holds(loss):
        raise ContractError("loss is not a product of this tape")
    loss.grad = np.ones_like(loss.data)
    for inputs, output, vjp, needs in reversed(tape.nodes):
        g = output.grad
        if g is None:
            continue
        grads = vjp(g, needs)
        for t, gt in zip(inputs, grads):
            if gt is None or not t.requires_grad:
                continue
            if t.grad is None:
                # take ownership of freshly allocated gradients; copy views
                # or g itself so later accumulation cannot alias anything
                if gt is not g and gt.base is None and gt.dtype == np.float64:
                    t.grad = gt
                else:
                    t.grad = np.array(gt, dtype=np.float64, copy=True)
            else:
                t.grad += gt


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
