"""Dense tensors with reverse-mode automatic differentiation.

The computation graph is implicit: every operation result keeps
references to its input tensors together with a closure that propagates
the output gradient to them.  ``backward`` walks the nodes reachable
from the loss in reverse topological order exactly once and accumulates
gradients with ``+=``, so repeated backward calls add and ``zero_grad``
resets.

Broadcasting in binary elementwise ops is restricted to leading batch
dimensions: the smaller operand's shape must equal a trailing suffix of
the larger one (a scalar trivially qualifies).  Anything fancier raises
ShapeError.

Training runs in float32.  The gradient verification suite builds
float64 graphs through the exact same code paths, which is what makes
finite-difference checking meaningful.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError, UsageError

_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording inside its block."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        # Leaves get a zero buffer up front so an untouched leaf reads
        # as exactly zero gradient after backward.
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = np.zeros_like(self.data) if self.requires_grad else None

    def backward(self):
        backward(self)

    def sum(self):
        return tensor_sum(self)

    def __add__(self, other):
        return add(self, _wrap(other, self))

    def __radd__(self, other):
        return add(_wrap(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap(other, self))

    def __rsub__(self, other):
        return sub(_wrap(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap(other, self))

    def __rmul__(self, other):
        return mul(_wrap(other, self), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, _wrap(-1.0, self))

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _wrap(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _result(data, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    out.grad = None
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _check_suffix_broadcast(sa, sb, opname):
    """Shapes must be equal, or the smaller a trailing suffix of the larger."""
    if sa == sb:
        return
    small, large = (sa, sb) if len(sa) <= len(sb) else (sb, sa)
    if len(small) < len(large) and large[len(large) - len(small):] == small:
        return
    raise ShapeError(f"{opname}: incompatible shapes {sa} and {sb}")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g.reshape(shape)


def add(a, b):
    _check_suffix_broadcast(a.shape, b.shape, "add")

    def bw(out):
        g = out.grad
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _result(a.data + b.data, (a, b), bw)


def sub(a, b):
    _check_suffix_broadcast(a.shape, b.shape, "sub")

    def bw(out):
        g = out.grad
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _result(a.data - b.data, (a, b), bw)


def mul(a, b):
    _check_suffix_broadcast(a.shape, b.shape, "mul")

    def bw(out):
        g = out.grad
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _result(a.data * b.data, (a, b), bw)


def matmul(a, b):
    """Matrix product; ``b`` is 2-D, ``a`` may carry leading batch dims."""
    if b.data.ndim != 2 or a.data.ndim < 2:
        raise ShapeError(f"matmul: need a.ndim>=2 and b.ndim==2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")

    def bw(out):
        g = out.grad
        _accum(a, g @ b.data.T)
        k, n = b.shape
        _accum(b, a.data.reshape(-1, k).T @ g.reshape(-1, n))

    return _result(a.data @ b.data, (a, b), bw)


def transpose(a):
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: need a 2-D tensor, got {a.shape}")

    def bw(out):
        _accum(a, out.grad.T)

    return _result(a.data.T.copy(), (a,), bw)


def sigmoid(a):
    # Stable in both tails.
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(o):
        _accum(a, o.grad * out * (1.0 - out))

    return _result(out, (a,), bw)


def tanh(a):
    out = np.tanh(a.data)

    def bw(o):
        _accum(a, o.grad * (1.0 - out * out))

    return _result(out, (a,), bw)


def relu(a):
    mask = a.data > 0

    def bw(o):
        _accum(a, o.grad * mask)

    return _result(np.where(mask, a.data, a.data.dtype.type(0)), (a,), bw)


def concat(tensors, axis):
    tensors = list(tensors)
    if not tensors:
        raise UsageError("concat: need at least one tensor")
    base = list(tensors[0].shape)
    for t in tensors[1:]:
        s = list(t.shape)
        s[axis] = base[axis]
        if s != base:
            raise ShapeError(
                f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    widths = [t.shape[axis] for t in tensors]
    splits = np.cumsum(widths)[:-1]

    def bw(out):
        parts = np.split(out.grad, splits, axis=axis)
        for t, p in zip(tensors, parts):
            _accum(t, p)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise UsageError("stack: need at least one tensor")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise ShapeError(f"stack: shapes {tensors[0].shape} and {t.shape} differ")

    def bw(out):
        gm = np.moveaxis(out.grad, axis, 0)
        for i, t in enumerate(tensors):
            _accum(t, gm[i])

    return _result(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def slice_axis(a, axis, start, stop):
    """Contiguous slice along one axis, keeping the dimension."""
    idx = (slice(None),) * axis + (slice(start, stop),)

    def bw(out):
        g = np.zeros_like(a.data)
        g[idx] = out.grad
        _accum(a, g)

    return _result(a.data[idx].copy(), (a,), bw)


def index_axis(a, axis, i):
    """Select one index along an axis, dropping the dimension."""
    if not 0 <= i < a.shape[axis]:
        raise UsageError(f"index_axis: index {i} out of range for axis {axis} of {a.shape}")
    idx = (slice(None),) * axis + (i,)

    def bw(out):
        g = np.zeros_like(a.data)
        g[idx] = out.grad
        _accum(a, g)

    return _result(a.data[idx].copy(), (a,), bw)


def embedding_lookup(table, ids):
    """Gather rows of ``table`` (V, E) by an integer id array of any shape."""
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise UsageError(
            f"embedding_lookup: id out of range [0, {table.shape[0]})")

    def bw(out):
        g = np.zeros_like(table.data)
        np.add.at(g, ids.reshape(-1), out.grad.reshape(-1, table.shape[1]))
        _accum(table, g)

    return _result(table.data[ids], (table,), bw)


def softmax(a, axis=-1):
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(o):
        g = o.grad
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, (g - dot) * out)

    return _result(out, (a,), bw)


def log_softmax(a, axis=-1):
    x = a.data
    m = x.max(axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def bw(o):
        g = o.grad
        _accum(a, g - np.exp(out) * g.sum(axis=axis, keepdims=True))

    return _result(out, (a,), bw)


def cross_entropy(logits, targets):
    """Mean over batch elements of negative log-softmax at the target id.

    ``logits`` has shape (..., V); ``targets`` is an integer array of
    shape (...).  The mean runs over every leading element.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ShapeError(
            f"cross_entropy: targets {targets.shape} do not match logits {logits.shape}")
    v = logits.shape[-1]
    if targets.size == 0:
        raise UsageError("cross_entropy: empty target batch")
    if targets.min() < 0 or targets.max() >= v:
        raise UsageError(f"cross_entropy: target id out of range [0, {v})")
    x = logits.data
    m = x.max(axis=-1, keepdims=True)
    shifted = x - m
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    ls = shifted - lse
    picked = np.take_along_axis(ls, targets[..., None], axis=-1)[..., 0]
    n = targets.size
    loss = np.asarray(-picked.sum() / n, dtype=x.dtype)

    def bw(out):
        g = out.grad
        dx = np.exp(ls)
        np.subtract.at(dx.reshape(-1, v), (np.arange(n), targets.reshape(-1)), 1.0)
        _accum(logits, dx * (g / n))

    return _result(loss, (logits,), bw)


def binary_cross_entropy_with_logits(logits, targets):
    """Mean over all elements of the stable logistic loss against 0/1 targets."""
    z = np.asarray(targets, dtype=logits.data.dtype)
    if z.shape != logits.shape:
        raise ShapeError(
            f"binary_cross_entropy_with_logits: targets {z.shape} vs logits {logits.shape}")
    if z.size == 0:
        raise UsageError("binary_cross_entropy_with_logits: empty batch")
    x = logits.data
    per = np.maximum(x, 0.0) - x * z + np.log1p(np.exp(-np.abs(x)))
    n = x.size
    loss = np.asarray(per.sum() / n, dtype=x.dtype)

    def bw(out):
        g = out.grad
        s = np.empty_like(x)
        pos = x >= 0
        s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        s[~pos] = ex / (1.0 + ex)
        _accum(logits, (s - z) * (g / n))

    return _result(loss, (logits,), bw)


def _time_mask(x, mask):
    if x.data.ndim != 3:
        raise ShapeError(f"time pooling: need (time, batch, features), got {x.shape}")
    t, b, _ = x.shape
    if mask is None:
        return np.ones((t, b), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (t, b):
        raise ShapeError(f"time pooling: mask {mask.shape} does not match {x.shape[:2]}")
    if not mask.any(axis=0).all():
        raise UsageError("time pooling: every example needs at least one valid step")
    return mask


def max_over_time(x, mask=None):
    """Per-feature max over valid time steps of an (T, B, F) sequence."""
    m = _time_mask(x, mask)
    masked = np.where(m[:, :, None], x.data, -np.inf)
    out = masked.max(axis=0)
    arg = masked.argmax(axis=0)

    def bw(o):
        g = np.zeros_like(x.data)
        bi, fi = np.indices(arg.shape)
        np.add.at(g, (arg, bi, fi), o.grad)
        _accum(x, g)

    return _result(out, (x,), bw)


def mean_over_time(x, mask=None):
    """Per-feature mean over valid time steps of an (T, B, F) sequence."""
    m = _time_mask(x, mask)
    counts = m.sum(axis=0).astype(x.data.dtype)[:, None]
    out = (x.data * m[:, :, None]).sum(axis=0) / counts

    def bw(o):
        _accum(x, m[:, :, None] * (o.grad / counts)[None])

    return _result(out, (x,), bw)


def last_over_time(x, lengths):
    """Hidden state at position length-1 for each batch element."""
    if x.data.ndim != 3:
        raise ShapeError(f"last_over_time: need (time, batch, features), got {x.shape}")
    t, b, _ = x.shape
    lengths = np.asarray(lengths)
    if lengths.shape != (b,):
        raise ShapeError(f"last_over_time: lengths {lengths.shape} for batch {b}")
    if lengths.min() < 1 or lengths.max() > t:
        raise UsageError(f"last_over_time: lengths must lie in [1, {t}]")
    idx = lengths - 1
    cols = np.arange(b)

    def bw(o):
        g = np.zeros_like(x.data)
        np.add.at(g, (idx, cols), o.grad)
        _accum(x, g)

    return _result(x.data[idx, cols].copy(), (x,), bw)


def dropout_apply(x, mask, keep_prob):
    """Apply a caller-supplied 0/1 mask with inverted scaling.

    The mask lives outside the graph; it only needs to broadcast to x.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise UsageError(f"dropout_apply: keep_prob {keep_prob} not in (0, 1]")
    scale = np.asarray(mask, dtype=x.data.dtype) / keep_prob

    def bw(out):
        _accum(x, _unbroadcast(out.grad * scale, x.shape))

    return _result(x.data * scale, (x,), bw)


def tensor_sum(a):
    """Sum of all elements, as a scalar tensor."""

    def bw(out):
        _accum(a, np.full_like(a.data, out.grad))

    return _result(np.asarray(a.data.sum(), dtype=a.data.dtype), (a,), bw)


def backward(loss):
    """Populate gradients of everything the scalar ``loss`` depends on.

    Leaf tensors accumulate across calls; gradients of interior nodes
    are transient and dropped when the traversal finishes, so a second
    backward adds exactly one more unit of gradient to the leaves.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    # Iterative post-order DFS gives reverse topological order.
    topo = []
    visited = set()
    stack_ = [(loss, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack_.append((p, False))
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node)
    for node in topo:
        if node._parents:
            node.grad = None


def zero_grad(tensors):
    for t in tensors:
        t.zero_grad()


def has_fault(t):
    """True when the tensor holds any NaN or Inf."""
    return not np.isfinite(t.data).all()
