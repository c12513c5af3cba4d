"""Dense tensors with reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` records its
parents and a closure mapping the output gradient to parent gradients.
``backward`` orders the recorded graph topologically (the tape) and replays
it in reverse.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None, _parents=(), _backward=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents = _parents
        self._backward = _backward

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self):
        return len(self.data)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    @property
    def T(self):
        return transpose(self, None)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype if dtype is not None else np.float64)
    return Tensor(arr)


def _pair(a, b):
    """Wrap operands; plain scalars/arrays adopt the dtype of the tensor operand."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return as_tensor(a), as_tensor(b)


def _make(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# tape and backward

def build_tape(loss):
    """Nodes reachable from ``loss`` in topological order (inputs first)."""
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(loss, tape=None):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf on the tape."""
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    tape = build_tape(loss) if tape is None else tape
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    a, b = _pair(a, b)
    out = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), bw)


def sub(a, b):
    a, b = _pair(a, b)
    out = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), bw)


def mul(a, b):
    a, b = _pair(a, b)
    out = a.data * b.data

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), bw)


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def bw(g):
        ga = g / b.data
        return _unbroadcast(ga, a.shape), _unbroadcast(-ga * out, b.shape)

    return _make(out, (a, b), bw)


def power(a, exponent):
    a = as_tensor(a)
    e = float(exponent)
    out = a.data ** e

    def bw(g):
        return (g * e * a.data ** (e - 1.0),)

    return _make(out, (a,), bw)


def exp(a):
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def smooth_l1(a):
    """Elementwise 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise."""
    x = a.data
    ax = np.abs(x)
    small = ax < 1.0
    out = np.where(small, 0.5 * x * x, ax - 0.5)
    return _make(out, (a,), lambda g: (g * np.where(small, x, np.sign(x)),))


def absolute(a):
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


# ---------------------------------------------------------------------------
# activations

def relu(a):
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def sigmoid(a):
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def log_sigmoid(a):
    """log(sigmoid(x)) without overflow."""
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    def bw(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        s = np.exp(out - x)  # sigmoid(-x) = sigmoid(x) * exp(-x)
        return (g * s,)

    return _make(out, (a,), bw)


def activation(a, kind):
    fn = {"relu": relu, "sigmoid": sigmoid, "tanh": tanh}.get(kind)
    if fn is None:
        raise ValueError(f"unknown activation {kind!r}")
    return fn(a)


# ---------------------------------------------------------------------------
# reductions and shape ops

def tsum(a, axis=None, keepdims=False):
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


def reshape(a, shape):
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _make(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, index):
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out, copy=True), (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw)


def split(a, sections, axis=-1):
    """Split into equal sections; each piece stays on the tape."""
    step = a.shape[axis] // sections
    pieces = []
    for i in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(i * step, (i + 1) * step)
        pieces.append(slice_(a, tuple(idx)))
    return pieces


def slice_(a, index):
    """Basic-slice view with a cheap scatter backward."""
    out = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(np.array(out, copy=True), (a,), bw)


def place(a, index, shape, fill=0.0):
    """New array of ``shape`` filled with ``fill``; ``out[index] = a``."""
    out = np.full(shape, fill, dtype=a.data.dtype)
    out[index] = a.data
    return _make(out, (a,), lambda g: (g[index],))


def max_reduce(a, axis):
    """Max over ``axis``; gradient goes to the first (lowest-index) maximum."""
    if a.shape[axis] == 0:
        raise ValueError(f"cannot max-reduce axis {axis} of extent 0")
    idx = np.argmax(a.data, axis=axis)
    idx_k = np.expand_dims(idx, axis)
    out = np.take_along_axis(a.data, idx_k, axis=axis).squeeze(axis)

    def bw(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, idx_k, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return _make(out, (a,), bw), idx


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def pointwise_conv(x, w, b=None):
    """Affine map over the last (channel) axis at every position."""
    x = as_tensor(x)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"pointwise_conv channel mismatch: input {x.shape}, weight {w.shape}")
    lead = x.shape[:-1]
    flat = reshape(x, (-1, x.shape[-1]))
    y = matmul(flat, w)
    if b is not None:
        y = add(y, b)
    return reshape(y, lead + (w.shape[1],))


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), bw)


def cosine_similarity(a, b, eps=1e-8):
    a = reshape(as_tensor(a), (-1,))
    b = reshape(as_tensor(b), (-1,))
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity length mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a.data))
    nb = float(np.linalg.norm(b.data))
    da, db = max(na, eps), max(nb, eps)
    dot = float(a.data @ b.data)
    out = np.asarray(dot / (da * db), dtype=a.data.dtype)

    def bw(g):
        g = float(g)
        ga = b.data / (da * db)
        gb = a.data / (da * db)
        # the eps clamp is constant w.r.t. its input below the threshold
        if na > eps:
            ga = ga - dot / (da * db) * a.data / (na * na)
        if nb > eps:
            gb = gb - dot / (da * db) * b.data / (nb * nb)
        return g * ga, g * gb

    return _make(out, (a, b), bw)


# ---------------------------------------------------------------------------
# convolution family (channels-last, single image H x W x C)

def _windows(xp, k, stride, ho, wo):
    s0, s1, s2 = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(ho, wo, k, k, xp.shape[2]),
        strides=(s0 * stride, s1 * stride, s0, s1, s2),
        writeable=False,
    )


def conv2d(x, w, b=None, stride=1, padding=0):
    """Cross-correlation of an H x W x Cin image with a k x k x Cin x Cout kernel."""
    x, w = as_tensor(x), as_tensor(w)
    h, wd, cin = x.shape
    k = w.shape[0]
    if w.shape[1] != k or w.shape[2] != cin:
        raise ShapeError(f"conv2d weight {w.shape} incompatible with input {x.shape}")
    if k > h + 2 * padding or k > wd + 2 * padding:
        raise ShapeError(f"conv2d kernel {k}x{k} larger than padded input {x.shape} (padding={padding})")
    cout = w.shape[3]
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0))) if padding else x.data
    cols = np.ascontiguousarray(_windows(xp, k, stride, ho, wo)).reshape(ho * wo, k * k * cin)
    wm = w.data.reshape(k * k * cin, cout)
    out = (cols @ wm).reshape(ho, wo, cout)
    parents = (x, w)
    if b is not None:
        out = out + b.data
        parents = (x, w, b)

    def bw(g):
        g2 = g.reshape(ho * wo, cout)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wm.T).reshape(ho, wo, k, k, cin)
            gxp = np.zeros(xp.shape, dtype=g.dtype)
            span_h = stride * (ho - 1) + 1
            span_w = stride * (wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    gxp[i:i + span_h:stride, j:j + span_w:stride, :] += gcols[:, :, i, j, :]
            gx = gxp[padding:padding + h, padding:padding + wd, :] if padding else gxp
        if b is not None:
            return gx, gw, g2.sum(axis=0)
        return gx, gw

    return _make(out, parents, bw)


def upsample_nearest2x(a):
    out = a.data.repeat(2, axis=0).repeat(2, axis=1)
    h, w = a.shape[0], a.shape[1]

    def bw(g):
        return (g.reshape(h, 2, w, 2, *g.shape[2:]).sum(axis=(1, 3)),)

    return _make(out, (a,), bw)


def batchnorm(x, gamma, beta, training, running_mean=None, running_var=None,
              eps=1e-5, momentum=0.1):
    """Normalize over every axis except the last.

    ``running_mean``/``running_var`` are numpy arrays updated in place in
    training mode (skipped for batches smaller than 2). Pass ``None`` in
    eval mode to signal that no statistics were ever recorded.
    """
    c = x.shape[-1]
    flat = x.data.reshape(-1, c)
    n = flat.shape[0]
    if training:
        mu = flat.mean(axis=0)
        var = flat.var(axis=0)
        if running_mean is not None and n >= 2:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * n / (n - 1)
    else:
        if running_mean is None or running_var is None:
            raise RuntimeError("batchnorm in eval mode before any running statistics were recorded")
        mu = running_mean.astype(flat.dtype)
        var = running_var.astype(flat.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (flat - mu) * inv
    out = (xhat * gamma.data + beta.data).reshape(x.shape)

    def bw(g):
        g2 = g.reshape(-1, c)
        ggamma = (g2 * xhat).sum(axis=0)
        gbeta = g2.sum(axis=0)
        gx = None
        if x.requires_grad:
            gxhat = g2 * gamma.data
            if training:
                gx = inv / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
            else:
                gx = gxhat * inv
            gx = gx.reshape(x.shape)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw)


def scatter_max(rows, cells, n_cells):
    """Scatter ``rows`` (N x C) into ``n_cells`` x C; colliding rows combine by max.

    Cells receiving no row are zero.  Gradient flows to the winning row per
    (cell, channel); ties go to the lowest row index.
    """
    rows = as_tensor(rows)
    cells = np.asarray(cells, dtype=np.int64)
    c = rows.shape[1]
    out = np.zeros((n_cells, c), dtype=rows.data.dtype)
    if len(cells) == 0:
        return _make(out, (rows,), lambda g: (np.zeros_like(rows.data),)), None
    order = np.lexsort((np.arange(len(cells)), cells))
    sc = cells[order]
    starts = np.flatnonzero(np.r_[True, sc[1:] != sc[:-1]])
    vals = rows.data[order]
    # winner per (segment, channel): max value, lowest original index on ties
    seg = np.repeat(np.arange(len(starts)), np.diff(np.r_[starts, len(sc)]))
    best = np.maximum.reduceat(vals, starts, axis=0)
    is_best = vals == best[seg]
    pos = np.where(is_best, np.arange(len(sc))[:, None], len(sc))
    win = np.minimum.reduceat(pos, starts, axis=0)
    winners = order[win]
    uniq = sc[starts]
    out[uniq] = best

    def bw(g):
        gr = np.zeros_like(rows.data)
        ch = np.broadcast_to(np.arange(c), winners.shape)
        gr[winners, ch] = g[uniq]
        return (gr,)

    return _make(out, (rows,), bw), winners
