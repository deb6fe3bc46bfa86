"""Reverse-mode automatic differentiation over dense float64 arrays.

The primitive set is exactly what a small decoder-only transformer needs:
matrix products, broadcast adds, scalar scaling, ReLU, softmax, layer
normalization, embedding lookup, shape moves, a fused softmax cross-entropy
head, and a reduction to a scalar. Every primitive evaluates eagerly on
numpy arrays. When a Record is active on the current thread, each primitive
whose output depends on a gradient-bearing tensor appends one node to the
record; `backward` replays those nodes once, in reverse, to accumulate
gradients.

Design notes:
  * float64 everywhere, no other dtype is ever produced.
  * Tensors are treated as immutable once constructed. Nothing in this
    module mutates `.data`; callers must follow the same rule or recorded
    gradients become meaningless.
  * One record belongs to one thread. Records nest (a stack per thread),
    pure-numpy evaluation happens whenever no record is active.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import InputError, ShapeError

__all__ = [
    "Tensor",
    "Record",
    "backward",
    "matmul",
    "add",
    "scale",
    "relu",
    "softmax",
    "layer_norm",
    "embed",
    "reshape",
    "transpose",
    "sum_all",
    "cross_entropy_softmax",
]


class Tensor:
    """A dense float64 array plus a flag marking it as a gradient leaf
    or as derived from one."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class _Node:
    """One recorded primitive application.

    Holds a strong reference to the output tensor so that id()-keyed
    gradient lookups stay unambiguous for the record's lifetime.
    """

    __slots__ = ("out", "inputs", "backprop")

    def __init__(self, out, inputs, backprop):
        self.out = out
        self.inputs = inputs
        self.backprop = backprop


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def _active():
    stack = _stack()
    return stack[-1] if stack else None


class Record:
    """Tape of primitives applied while the record is active.

    Use as a context manager around one forward pass:

        with Record() as rec:
            loss = batch_loss(params, inputs, targets)
        grads = backward(rec, loss, params.leaves)
    """

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Record":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self, "records must be exited in reverse entry order"
        return False


def _emit(out: Tensor, inputs: tuple[Tensor, ...], backprop) -> Tensor:
    # Only outputs that can carry gradient need a node.
    if out.requires_grad:
        rec = _active()
        if rec is not None:
            rec.nodes.append(_Node(out, inputs, backprop))
    return out


def backward(record: Record, output: Tensor, leaves: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Accumulate d(output)/d(leaf) for every named leaf.

    `output` must be scalar. Each recorded node is replayed exactly once,
    newest first. Leaves the output does not depend on get exact zero
    arrays of the leaf's shape, so the result always has the same keys as
    `leaves`.
    """
    if output.data.shape != ():
        raise ShapeError(f"backward expects a scalar output, got shape {output.data.shape}")
    grads: dict[int, np.ndarray] = {id(output): np.ones((), dtype=np.float64)}
    for node in reversed(record.nodes):
        g_out = grads.pop(id(node.out), None)
        if g_out is None:
            continue
        for tensor, g_in in zip(node.inputs, node.backprop(g_out)):
            if g_in is None or not tensor.requires_grad:
                continue
            prev = grads.get(id(tensor))
            grads[id(tensor)] = g_in if prev is None else prev + g_in
    return {
        name: grads.get(id(tensor), np.zeros_like(tensor.data))
        for name, tensor in leaves.items()
    }


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product.

    Supported shapes: [..., m, k] @ [k, n] (shared weight applied to every
    leading position, computed as one flattened product so the float path
    is identical regardless of batch shape), and stacked [..., m, k] @
    [..., k, n] with equal leading dimensions.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs at least 2-d operands, got {ad.shape} and {bd.shape}")
    if bd.ndim == 2:
        if ad.shape[-1] != bd.shape[0]:
            raise ShapeError(f"matmul shapes {ad.shape} and {bd.shape} do not align")
        k, n = bd.shape
        out_data = (ad.reshape(-1, k) @ bd).reshape(ad.shape[:-1] + (n,))
    elif ad.ndim == bd.ndim and ad.shape[:-2] == bd.shape[:-2] and ad.shape[-1] == bd.shape[-2]:
        out_data = np.matmul(ad, bd)
    else:
        raise ShapeError(f"matmul shapes {ad.shape} and {bd.shape} do not align")
    out = Tensor(out_data, a.requires_grad or b.requires_grad)

    def backprop(g):
        if bd.ndim == 2:
            k = ad.shape[-1]
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ bd.T).reshape(ad.shape)
            gb = ad.reshape(-1, k).T @ g2
        else:
            ga = np.matmul(g, np.swapaxes(bd, -1, -2))
            gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return ga, gb

    return _emit(out, (a, b), backprop)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum where b's shape equals a trailing suffix of a's
    shape (covers residual adds, bias rows, positional tables, and masks)."""
    ad, bd = a.data, b.data
    if bd.ndim > ad.ndim or ad.shape[ad.ndim - bd.ndim:] != bd.shape:
        raise ShapeError(f"add needs a suffix-broadcastable pair, got {ad.shape} and {bd.shape}")
    out = Tensor(ad + bd, a.requires_grad or b.requires_grad)
    lead = tuple(range(ad.ndim - bd.ndim))

    def backprop(g):
        gb = g.sum(axis=lead) if lead else g
        return g, gb

    return _emit(out, (a, b), backprop)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a python float (attention scaling, temperature)."""
    factor = float(factor)
    out = Tensor(x.data * factor, x.requires_grad)
    return _emit(out, (x,), lambda g: (g * factor,))


def relu(x: Tensor) -> Tensor:
    xd = x.data
    out = Tensor(np.maximum(xd, 0.0), x.requires_grad)
    return _emit(out, (x,), lambda g: (g * (xd > 0.0),))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Shifted-exponent softmax along one axis.

    The running maximum is subtracted before exponentiation, so a fully
    masked-out score (a very large negative number) underflows to an exact
    zero weight instead of overflowing.
    """
    xd = x.data
    if not -xd.ndim <= axis < xd.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {xd.shape}")
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s, x.requires_grad)

    def backprop(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _emit(out, (x,), backprop)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize the last axis to zero mean and unit variance (population
    variance, eps added under the square root), then apply gain and bias."""
    xd = x.data
    d = xd.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(
            f"layer_norm gain/bias must have shape ({d},), got {gain.data.shape} and {bias.data.shape}"
        )
    mean = xd.mean(axis=-1, keepdims=True)
    centered = xd - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    gd = gain.data
    out = Tensor(xhat * gd + bias.data, x.requires_grad or gain.requires_grad or bias.requires_grad)
    lead = tuple(range(xd.ndim - 1))

    def backprop(g):
        gh = g * gd
        gx = inv * (
            gh
            - gh.mean(axis=-1, keepdims=True)
            - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        )
        ggain = (g * xhat).sum(axis=lead) if lead else g * xhat
        gbias = g.sum(axis=lead) if lead else g
        return gx, ggain, gbias

    return _emit(out, (x, gain, bias), backprop)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: result[..., :] = table[ids[...], :].

    The backward pass scatter-adds, so repeated ids accumulate gradient.
    """
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError(f"embed ids must be integers, got dtype {ids.dtype}")
    n_rows = table.data.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n_rows):
        raise InputError(f"embed ids must lie in [0, {n_rows}), got range [{ids.min()}, {ids.max()}]")
    out = Tensor(table.data[ids], table.requires_grad)
    flat_ids = ids.ravel()
    width = table.data.shape[1]

    def backprop(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, flat_ids, g.reshape(-1, width))
        return (gt,)

    return _emit(out, (table,), backprop)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    xd = x.data
    out = Tensor(xd.reshape(shape), x.requires_grad)
    return _emit(out, (x,), lambda g: (g.reshape(xd.shape),))


def transpose(x: Tensor, axes: tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(x.data, axes), x.requires_grad)
    return _emit(out, (x,), lambda g: (np.transpose(g, inverse),))


def sum_all(x: Tensor) -> Tensor:
    """Reduce every element to one scalar (test head for gradient checks)."""
    xd = x.data
    out = Tensor(xd.sum(), x.requires_grad)
    return _emit(out, (x,), lambda g: (np.full(xd.shape, float(g)),))


def cross_entropy_softmax(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer targets.

    logits has shape [..., vocab] and targets the matching [...] shape; the
    mean runs over every target position. Computed via the log-sum-exp form
    so large logits stay finite, and fused with softmax in the backward
    pass: d(loss)/d(logits) = (softmax - onehot) / position_count.
    """
    ld = logits.data
    targets = np.asarray(targets)
    if ld.ndim < 2:
        raise ShapeError(f"cross_entropy_softmax needs [..., vocab] logits, got {ld.shape}")
    if targets.shape != ld.shape[:-1]:
        raise ShapeError(
            f"targets shape {targets.shape} does not match logit positions {ld.shape[:-1]}"
        )
    if not np.issubdtype(targets.dtype, np.integer):
        raise InputError(f"targets must be integers, got dtype {targets.dtype}")
    vocab = ld.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise InputError(
            f"targets must lie in [0, {vocab}), got range [{targets.min()}, {targets.max()}]"
        )
    m = ld.max(axis=-1, keepdims=True)
    e = np.exp(ld - m)
    z = e.sum(axis=-1, keepdims=True)
    log_probs = (ld - m) - np.log(z)
    idx = targets[..., None]
    picked = np.take_along_axis(log_probs, idx, axis=-1)
    count = targets.size
    out = Tensor(-picked.sum() / count, logits.requires_grad)
    probs = e / z

    def backprop(g):
        gl = probs.copy()
        np.put_along_axis(gl, idx, np.take_along_axis(gl, idx, axis=-1) - 1.0, axis=-1)
        gl *= float(g) / count
        return (gl,)

    return _emit(out, (logits,), backprop)
