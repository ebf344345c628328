"""Dense-tensor engine with reverse-mode differentiation.

Values live in numpy arrays. Every operation that touches a tensor
requiring gradients records a backward closure; calling ``backward()`` on
a scalar result walks the graph once in reverse topological order and
accumulates adjoints into ``grad`` buffers.

A computation graph is confined to one thread. Distinct graphs may run on
distinct threads concurrently; there is no shared mutable state besides
the process-wide grad-enable flag, which is only toggled from the thread
that owns the graph being built.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterator, Sequence

import numpy as np


class TensorError(ValueError):
    """Shape mismatch or invalid numeric operation."""


_grad_enabled = True


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A dense array plus optional autodiff bookkeeping."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # -- construction helpers -------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # -- graph mechanics -------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None) -> None:
        """Backpropagate from this tensor.

        ``grad`` seeds the adjoint; a scalar tensor defaults to 1. Each
        producing operation is visited exactly once.
        """
        if grad is None:
            if self.data.size != 1:
                raise TensorError("backward on non-scalar requires an explicit gradient")
            grad = np.ones_like(self.data)
        seed = np.broadcast_to(np.asarray(grad, dtype=self.data.dtype), self.data.shape)

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))

        self._accumulate(seed)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes=None):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


class Parameter(Tensor):
    """A named, trainable tensor with Adam moment buffers."""

    __slots__ = ("name", "adam_m", "adam_v")

    def __init__(self, name: str, data):
        super().__init__(np.array(data), requires_grad=True)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] > 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise arithmetic ------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise TensorError(f"add: incompatible shapes {a.shape} + {b.shape}") from None

    def backward_fn(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise TensorError(f"sub: incompatible shapes {a.shape} - {b.shape}") from None

    def backward_fn(g):
        a._accumulate(_unbroadcast(g, a.shape))
        b._accumulate(-_unbroadcast(g, b.shape))

    return _make(data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    if isinstance(b, (int, float)) and not isinstance(b, bool):
        return scale(_as_tensor(a), float(b))
    if isinstance(a, (int, float)) and not isinstance(a, bool):
        return scale(_as_tensor(b), float(a))
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise TensorError(f"mul: incompatible shapes {a.shape} * {b.shape}") from None

    def backward_fn(g):
        a._accumulate(_unbroadcast(g * b.data, a.shape))
        b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(data, (a, b), backward_fn)


def scale(a: Tensor, s: float) -> Tensor:
    a = _as_tensor(a)
    data = a.data * a.data.dtype.type(s)

    def backward_fn(g):
        a._accumulate(g * a.data.dtype.type(s))

    return _make(data, (a,), backward_fn)


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise TensorError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)

    def backward_fn(g):
        a._accumulate(_unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape))
        b._accumulate(_unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape))

    return _make(data, (a, b), backward_fn)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Fused x @ w + b for 2-D ``x``; one graph node instead of two."""
    x, w = _as_tensor(x), _as_tensor(w)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise TensorError(f"linear: incompatible shapes {x.shape} @ {w.shape}")
    data = np.matmul(x.data, w.data)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[1],):
            raise TensorError(f"linear: bias shape {b.shape} does not match width {w.shape[1]}")
        data += b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward_fn(g):
        x._accumulate(np.matmul(g, w.data.T))
        w._accumulate(np.matmul(x.data.T, g))
        if b is not None:
            b._accumulate(g.sum(axis=0))

    return _make(data, parents, backward_fn)


def split_heads(x: Tensor, n_head: int) -> Tensor:
    """(L, d) -> (n_head, L, d // n_head)."""
    x = _as_tensor(x)
    l, d = x.shape
    if d % n_head != 0:
        raise TensorError(f"split_heads: width {d} not divisible by {n_head}")
    dh = d // n_head
    data = x.data.reshape(l, n_head, dh).transpose(1, 0, 2)

    def backward_fn(g):
        x._accumulate(g.transpose(1, 0, 2).reshape(l, d))

    return _make(data, (x,), backward_fn)


def merge_heads(x: Tensor) -> Tensor:
    """(n_head, L, dh) -> (L, n_head * dh)."""
    x = _as_tensor(x)
    h, l, dh = x.shape
    data = x.data.transpose(1, 0, 2).reshape(l, h * dh)

    def backward_fn(g):
        x._accumulate(g.reshape(l, h, dh).transpose(1, 0, 2))

    return _make(data, (x,), backward_fn)


# -- shape manipulation ------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise TensorError(f"reshape: cannot view {a.shape} as {shape}") from None

    def backward_fn(g):
        a._accumulate(g.reshape(a.shape))

    return _make(data, (a,), backward_fn)


def transpose(a: Tensor, axes=None) -> Tensor:
    a = _as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    axes = tuple(axes)
    data = a.data.transpose(axes)
    inverse = tuple(np.argsort(axes))

    def backward_fn(g):
        a._accumulate(g.transpose(inverse))

    return _make(data, (a,), backward_fn)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise TensorError("concat: empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise TensorError(
            f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        ) from None
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward_fn(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(g[tuple(idx)])

    return _make(data, tuple(tensors), backward_fn)


def gather_rows(a: Tensor, indices) -> Tensor:
    """Select rows along axis 0; used for embedding lookup and span gathers."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise TensorError(f"gather_rows: indices must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise TensorError(f"gather_rows: index out of range for {a.shape[0]} rows")
    data = a.data[idx]

    def backward_fn(g):
        buf = np.zeros_like(a.data)
        np.add.at(buf, idx, g)
        a._accumulate(buf)

    return _make(data, (a,), backward_fn)


embedding_lookup = gather_rows


# -- reductions ---------------------------------------------------------------


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward_fn(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(data, (a,), backward_fn)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = np.maximum(a.data, 0)

    def backward_fn(g):
        a._accumulate(g * (a.data > 0))

    return _make(data, (a,), backward_fn)


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """Tanh-form GELU; smooth, so finite differences stay well behaved."""
    a = _as_tensor(a)
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + _GELU_A * x2 * x))
    data = 0.5 * x * (1.0 + t)

    def backward_fn(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        a._accumulate(g * local)

    return _make(data, (a,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    data = _sigmoid_np(a.data)

    def backward_fn(g):
        a._accumulate(g * data * (1.0 - data))

    return _make(data, (a,), backward_fn)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dropout(a: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when rate == 0."""
    if rate <= 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise TensorError(f"dropout: rate {rate} outside [0, 1)")
    a = _as_tensor(a)
    keep = (rng.random(a.shape) >= rate).astype(a.data.dtype)
    keep *= a.data.dtype.type(1.0 / (1.0 - rate))
    data = a.data * keep

    def backward_fn(g):
        a._accumulate(g * keep)

    return _make(data, (a,), backward_fn)


# -- normalization ------------------------------------------------------------


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine terms."""
    a, gain, bias = _as_tensor(a), _as_tensor(gain), _as_tensor(bias)
    d = a.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise TensorError(
            f"layer_norm: affine shapes {gain.shape}/{bias.shape} do not match width {d}"
        )
    inv_d = 1.0 / d
    mu = a.data.sum(axis=-1, keepdims=True) * inv_d
    centered = a.data - mu
    var = (centered * centered).sum(axis=-1, keepdims=True) * inv_d
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv
    data = y * gain.data + bias.data

    def backward_fn(g):
        lead = tuple(range(g.ndim - 1))
        gain._accumulate((g * y).sum(axis=lead))
        bias._accumulate(g.sum(axis=lead))
        dy = g * gain.data
        term = (
            dy
            - dy.sum(axis=-1, keepdims=True) * inv_d
            - y * ((dy * y).sum(axis=-1, keepdims=True) * inv_d)
        )
        a._accumulate(inv * term)

    return _make(data, (a, gain, bias), backward_fn)


# -- attention / loss kernels -------------------------------------------------


def softmax_masked(logits: Tensor, mask) -> Tensor:
    """Exp-normalize the last axis over mask-1 positions.

    Mask-0 positions get probability exactly 0. A row whose mask is all
    zero falls back to an unmasked softmax over the full row, so the
    result is always a proper distribution.
    """
    logits = _as_tensor(logits)
    if mask is None:
        rowmax = logits.data.max(axis=-1, keepdims=True)
        e = np.exp(logits.data - rowmax)
        p = e / e.sum(axis=-1, keepdims=True)
    else:
        mask = np.asarray(mask)
        try:
            eff = np.broadcast_to(mask != 0, logits.shape)
        except ValueError:
            raise TensorError(
                f"softmax_masked: mask shape {mask.shape} does not broadcast to {logits.shape}"
            ) from None
        dead = ~eff.any(axis=-1)
        if dead.any():
            eff = eff.copy()
            eff[dead] = True
        neg = np.where(eff, logits.data, -np.inf)
        rowmax = neg.max(axis=-1, keepdims=True)
        e = np.exp(logits.data - rowmax) * eff
        p = e / e.sum(axis=-1, keepdims=True)

    def backward_fn(g):
        dot = (g * p).sum(axis=-1, keepdims=True)
        logits._accumulate(p * (g - dot))

    return _make(p, (logits,), backward_fn)


def cross_entropy_label_smoothed(
    logits: Tensor, targets, epsilon: float, ignore_id: int = -1
) -> Tensor:
    """Mean smoothed cross-entropy over positions whose target is not ignored.

    The smoothed target puts 1-epsilon on the gold id and epsilon/(V-1)
    on every other id.
    """
    logits = _as_tensor(logits)
    if logits.data.ndim != 2:
        raise TensorError(f"cross_entropy: logits must be (positions, vocab), got {logits.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise TensorError(
            f"cross_entropy: targets shape {targets.shape} does not match logits rows {logits.shape[0]}"
        )
    if not 0.0 <= epsilon < 1.0:
        raise TensorError(f"cross_entropy: epsilon {epsilon} outside [0, 1)")
    n, v = logits.shape
    if epsilon > 0.0 and v < 2:
        raise TensorError("cross_entropy: smoothing needs vocab size >= 2")
    keep = targets != ignore_id
    n_keep = int(keep.sum())
    if n_keep == 0:
        raise TensorError("cross_entropy: no non-ignored positions")
    if targets[keep].min() < 0 or targets[keep].max() >= v:
        raise TensorError("cross_entropy: target id out of vocab range")

    z = logits.data
    zmax = z.max(axis=-1, keepdims=True)
    logz = zmax + np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
    logp = z - logz
    rows = np.arange(n)
    lt = logp[rows, np.clip(targets, 0, v - 1)]
    if epsilon == 0.0:
        per = -lt
    else:
        rest = logp.sum(axis=-1) - lt
        per = -(1.0 - epsilon) * lt - (epsilon / (v - 1)) * rest
    loss = per[keep].sum() / n_keep
    data = np.asarray(loss, dtype=z.dtype)

    def backward_fn(g):
        p = np.exp(logp)
        q = np.full_like(p, epsilon / (v - 1) if epsilon > 0.0 else 0.0)
        q[rows, np.clip(targets, 0, v - 1)] = 1.0 - epsilon
        d = (p - q) * (float(g) / n_keep)
        d[~keep] = 0.0
        logits._accumulate(d)

    return _make(data, (logits,), backward_fn)


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits (numerically stable form)."""
    logits = _as_tensor(logits)
    y = np.asarray(labels, dtype=logits.data.dtype)
    if y.shape != logits.shape:
        raise TensorError(f"bce: labels shape {y.shape} does not match logits {logits.shape}")
    if y.size == 0:
        raise TensorError("bce: empty input")
    z = logits.data
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    data = np.asarray(per.mean(), dtype=z.dtype)

    def backward_fn(g):
        logits._accumulate((_sigmoid_np(z) - y) * (float(g) / y.size))

    return _make(data, (logits,), backward_fn)


def log_softmax_np(z: np.ndarray) -> np.ndarray:
    """Plain numpy log-softmax over the last axis (no graph)."""
    zmax = z.max(axis=-1, keepdims=True)
    return z - zmax - np.log(np.exp(z - zmax).sum(axis=-1, keepdims=True))
