"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a row-major numpy float64 array. While a ``Tape`` is
active (``with Tape() as tape:``), every operation whose inputs require
gradient records a node on the tape; ``backward(loss)`` replays the tape
once in reverse and accumulates ``.grad`` buffers on every participating
tensor. Tensors created outside a tape, or from inputs that do not require
gradient, are plain values and never accumulate gradient.

Broadcasting is deliberately restricted: two shapes are compatible only if
they are equal or one is a trailing suffix of the other (bias-style
expansion over leading axes). Anything richer must be expanded explicitly
by the caller.
"""

from __future__ import annotations

import threading
from typing import Optional, Sequence

import numpy as np

from .errors import ContractError, GraphError, ShapeMismatch

__all__ = [
    "Tensor",
    "Tape",
    "backward",
    "add",
    "sub",
    "mul",
    "affine",
    "scale",
    "matmul",
    "relu",
    "tanh",
    "sigmoid",
    "softmax",
    "log_softmax",
    "sum_all",
    "layer_norm",
    "embedding",
    "gather_last",
    "dropout",
    "reshape",
    "transpose",
    "concat",
    "split_last",
    "stack",
]


class Tensor:
    """An n-dimensional float64 value, optionally attached to a tape."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id: Optional[int] = None
        self._tape: Optional["Tape"] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        """A view of the same values with no graph attachment."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the primary API.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class _Node:
    __slots__ = ("inputs", "out", "grad_fn")

    def __init__(self, inputs, out, grad_fn):
        self.inputs = inputs
        self.out = out
        self.grad_fn = grad_fn


_ACTIVE = threading.local()


def _active_tape() -> Optional["Tape"]:
    return getattr(_ACTIVE, "tape", None)


class Tape:
    """Append-only record of operations, replayed in reverse by backward().

    Nodes are appended in execution order, so the sequence is already a
    topological order of the computation graph; the backward pass walks it
    once from the output node down.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._outer: Optional["Tape"] = None

    def __enter__(self) -> "Tape":
        self._outer = _active_tape()
        _ACTIVE.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.tape = self._outer
        self._outer = None

    def __len__(self) -> int:
        return len(self._nodes)

    def _record(self, inputs, out: Tensor, grad_fn) -> int:
        self._nodes.append(_Node(inputs, out, grad_fn))
        return len(self._nodes) - 1

    def backward(self, output: Tensor) -> None:
        """Accumulate d(output)/d(leaf) into .grad of every recorded tensor."""
        if output.data.size != 1:
            raise ContractError(
                f"backward needs a scalar output, got shape {output.shape}"
            )
        if output.node_id is None or output._tape is not self:
            raise GraphError("output is not recorded on this tape")
        node = self._nodes[output.node_id]
        if node.out is not output:
            raise GraphError("output does not match its recorded node")
        output.grad = np.ones_like(output.data)
        for node in reversed(self._nodes[: output.node_id + 1]):
            out_grad = node.out.grad
            if out_grad is None:
                continue
            for tensor, grad in zip(node.inputs, node.grad_fn(out_grad)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.grad is None:
                    tensor.grad = grad
                else:
                    tensor.grad = tensor.grad + grad


def backward(output: Tensor) -> None:
    """Run reverse-mode differentiation from a scalar output."""
    if output.data.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    if output._tape is None or output.node_id is None:
        raise GraphError("output is detached from any computation graph")
    output._tape.backward(output)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _attach(out_data: np.ndarray, inputs: Sequence[Tensor], grad_fn) -> Tensor:
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._tape = tape
        out.node_id = tape._record(tuple(inputs), out, grad_fn)
    return out


def _check_suffix_broadcast(sa: tuple, sb: tuple) -> None:
    if sa == sb:
        return
    if len(sa) < len(sb) and sb[len(sb) - len(sa):] == sa:
        return
    if len(sb) < len(sa) and sa[len(sa) - len(sb):] == sb:
        return
    raise ShapeMismatch(f"shapes {sa} and {sb} are not trailing-broadcast compatible")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original (suffix) shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)
    out = a.data + b.data

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _attach(out, (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)
    out = a.data - b.data

    def grad_fn(g):
        return _reduce_to(g, a.shape), -_reduce_to(g, b.shape)

    return _attach(out, (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_suffix_broadcast(a.shape, b.shape)
    a_data, b_data = a.data, b.data
    out = a_data * b_data

    def grad_fn(g):
        return _reduce_to(g * b_data, a.shape), _reduce_to(g * a_data, b.shape)

    return _attach(out, (a, b), grad_fn)


def affine(t, mul_by: float, add_to: float = 0.0) -> Tensor:
    """Elementwise mul_by * t + add_to with scalar constants."""
    t = _as_tensor(t)
    mul_by = float(mul_by)
    out = t.data * mul_by + float(add_to)

    def grad_fn(g):
        return (g * mul_by,)

    return _attach(out, (t,), grad_fn)


def scale(t, factor: float) -> Tensor:
    return affine(t, factor, 0.0)


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes.

    Leading axes must match exactly or be absent on one side (a 2-D
    operand applies to every leading slice of the other).
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    lead_a, lead_b = a.shape[:-2], b.shape[:-2]
    if lead_a and lead_b and lead_a != lead_b:
        raise ShapeMismatch(f"matmul leading extents differ: {a.shape} vs {b.shape}")
    a_data, b_data = a.data, b.data
    out = np.matmul(a_data, b_data)

    def grad_fn(g):
        ga = _reduce_to(np.matmul(g, np.swapaxes(b_data, -1, -2)), a.shape)
        gb = _reduce_to(np.matmul(np.swapaxes(a_data, -1, -2), g), b.shape)
        return ga, gb

    return _attach(out, (a, b), grad_fn)


def relu(t) -> Tensor:
    t = _as_tensor(t)
    mask = t.data > 0
    out = np.where(mask, t.data, 0.0)

    def grad_fn(g):
        return (g * mask,)

    return _attach(out, (t,), grad_fn)


def tanh(t) -> Tensor:
    t = _as_tensor(t)
    out = np.tanh(t.data)

    def grad_fn(g):
        return (g * (1.0 - out * out),)

    return _attach(out, (t,), grad_fn)


def sigmoid(t) -> Tensor:
    t = _as_tensor(t)
    out = 1.0 / (1.0 + np.exp(-t.data))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _attach(out, (t,), grad_fn)


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ShapeMismatch(f"axis {axis} invalid for {ndim}-D tensor")
    return axis % ndim if ndim else 0


def softmax(t, axis: int = -1) -> Tensor:
    """Softmax along ``axis``, stabilized by subtracting the slice maximum."""
    t = _as_tensor(t)
    axis = _check_axis(axis, t.data.ndim)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _attach(out, (t,), grad_fn)


def log_softmax(t, axis: int = -1) -> Tensor:
    """log(softmax(t)) in the numerically stable log-sum-exp form."""
    t = _as_tensor(t)
    axis = _check_axis(axis, t.data.ndim)
    m = t.data.max(axis=axis, keepdims=True)
    shifted = t.data - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def grad_fn(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _attach(out, (t,), grad_fn)


def sum_all(t) -> Tensor:
    """Sum every element to a scalar (shape ())."""
    t = _as_tensor(t)
    shape = t.shape
    out = np.asarray(t.data.sum())

    def grad_fn(g):
        return (np.broadcast_to(g, shape).astype(np.float64, copy=True),)

    return _attach(out, (t,), grad_fn)


def layer_norm(x, gain, bias, epsilon: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then gain*x + bias.

    Variance is the biased (1/N) estimator. gain and bias must have the
    shape of the last axis.
    """
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(
            f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mean = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = centered * inv_std
    out = x_hat * gain.data + bias.data

    def grad_fn(g):
        lead = tuple(range(g.ndim - 1))
        g_gain = (g * x_hat).sum(axis=lead)
        g_bias = g.sum(axis=lead)
        gx_hat = g * gain.data
        g_x = inv_std * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - x_hat * (gx_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        return g_x, g_gain, g_bias

    return _attach(out, (x, gain, bias), grad_fn)


def embedding(table, ids: np.ndarray) -> Tensor:
    """Look up rows of ``table`` [V, d] by an integer id array."""
    table = _as_tensor(table)
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeMismatch(f"embedding table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch(
            f"ids out of range for table with {table.shape[0]} rows"
        )
    table_shape = table.shape
    out = table.data[ids]

    def grad_fn(g):
        g_table = np.zeros(table_shape, dtype=np.float64)
        np.add.at(g_table, ids.ravel(), g.reshape(-1, table_shape[1]))
        return (g_table,)

    return _attach(out, (table,), grad_fn)


def gather_last(x, ids: np.ndarray) -> Tensor:
    """Pick one entry per slice along the last axis: out[...] = x[..., ids[...]]."""
    x = _as_tensor(x)
    ids = np.asarray(ids)
    if ids.shape != x.shape[:-1]:
        raise ShapeMismatch(
            f"gather ids shape {ids.shape} must equal {x.shape[:-1]}"
        )
    expanded = ids[..., None]
    out = np.take_along_axis(x.data, expanded, axis=-1)[..., 0]
    x_shape = x.shape

    def grad_fn(g):
        g_x = np.zeros(x_shape, dtype=np.float64)
        np.put_along_axis(g_x, expanded, g[..., None], axis=-1)
        return (g_x,)

    return _attach(out, (x,), grad_fn)


def dropout(x, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: kept activations are divided by the keep probability.

    With rng=None or p=0 this is the identity, so inference needs no
    rescaling and records no extra node.
    """
    x = _as_tensor(x)
    if rng is None or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    keep = 1.0 - p
    mask = (rng.random(x.shape) >= p) / keep
    out = x.data * mask

    def grad_fn(g):
        return (g * mask,)

    return _attach(out, (x,), grad_fn)


def reshape(t, shape) -> Tensor:
    t = _as_tensor(t)
    old_shape = t.shape
    out = t.data.reshape(shape)

    def grad_fn(g):
        return (g.reshape(old_shape),)

    return _attach(out, (t,), grad_fn)


def transpose(t, axes) -> Tensor:
    t = _as_tensor(t)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = t.data.transpose(axes)

    def grad_fn(g):
        return (g.transpose(inverse),)

    return _attach(out, (t,), grad_fn)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("concat needs at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _attach(out, tuple(tensors), grad_fn)


def split_last(t, sizes: Sequence[int]) -> list[Tensor]:
    """Split the last axis into consecutive chunks of the given sizes."""
    t = _as_tensor(t)
    if sum(sizes) != t.shape[-1]:
        raise ShapeMismatch(f"split sizes {tuple(sizes)} do not cover last axis of {t.shape}")
    bounds = np.cumsum(sizes)
    pieces = []
    start = 0
    for i, stop in enumerate(bounds):
        lo, hi = start, int(stop)
        start = hi
        piece_data = t.data[..., lo:hi]
        t_shape = t.shape

        def grad_fn(g, lo=lo, hi=hi):
            g_full = np.zeros(t_shape, dtype=np.float64)
            g_full[..., lo:hi] = g
            return (g_full,)

        pieces.append(_attach(piece_data.copy(), (t,), grad_fn))
    return pieces


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ContractError("stack needs at least one tensor")
    out = np.stack([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _attach(out, tuple(tensors), grad_fn)
