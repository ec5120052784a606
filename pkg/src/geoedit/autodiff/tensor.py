"""Dense tensors with reverse-mode differentiation.

A :class:`Tensor` wraps a row-major numpy array (float64 for verification,
float32 permitted for training speed) together with an optional gradient and
the operation record needed for backward traversal.  The tape is rebuilt on
every forward pass; calling :func:`backward` walks it once in reverse
topological order.  Repeated backward calls without :func:`zero_grad`
accumulate into ``.grad``.

Value arrays are immutable once created (enforced via numpy write flags);
only gradients mutate, and a tape must stay on a single thread.
"""

import numpy as np

from ..errors import ContractError, DimensionError

_ALLOWED_DTYPES = (np.float64, np.float32)


def _freeze(arr):
    arr.setflags(write=False)
    return arr


class Tensor:
    """A value node on the autodiff tape.

    Gradient arrays are materialized lazily on first accumulation and always
    match the value's shape.  The parent graph is acyclic by construction.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.dtype(np.float64), np.dtype(np.float32)):
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = _freeze(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

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
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        """A writable copy of the value."""
        return np.array(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    # operator sugar mirrors the functional ops below
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def as_tensor(x, dtype=np.float64):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def constant(x, dtype=np.float64):
    """A non-differentiable tape leaf."""
    return Tensor(np.asarray(x, dtype=dtype), requires_grad=False)


def _node(value, parents, backward_fn):
    requires = any(p.requires_grad for p in parents)
    return Tensor(
        value,
        requires_grad=requires,
        _parents=tuple(parents) if requires else (),
        _backward=backward_fn if requires else None,
    )


def backward(loss):
    """Reverse-mode sweep from a scalar-shaped loss.

    Every tensor reachable from ``loss`` that requires a gradient receives
    (accumulates) one.  Raises :class:`ContractError` for non-scalar losses.
    """
    if loss.size != 1:
        raise ContractError(
            f"backward requires a scalar-shaped loss, got shape {loss.shape}"
        )
    if not loss.requires_grad:
        return

    # Iterative topological order over the requiring subgraph.
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.accumulate_grad(g)
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


# ---------------------------------------------------------------------------
# primitive operations
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product; 2-D inputs or batched 3-D inputs with equal batch."""
    a, b = as_tensor(a), as_tensor(b)
    ok = (
        (a.data.ndim == 2 and b.data.ndim == 2 and a.shape[1] == b.shape[0])
        or (
            a.data.ndim == 3
            and b.data.ndim == 3
            and a.shape[0] == b.shape[0]
            and a.shape[2] == b.shape[1]
        )
        or (a.data.ndim == 3 and b.data.ndim == 2 and a.shape[2] == b.shape[0])
    )
    if not ok:
        raise DimensionError(
            f"matmul: incompatible shapes {tuple(a.shape)} and {tuple(b.shape)}"
        )
    out = a.data @ b.data

    def back(g):
        if a.data.ndim == 3 and b.data.ndim == 2:
            ga = g @ b.data.T
            gb = np.einsum("bnc,bnd->cd", a.data, g, optimize=True)
        else:
            ga = g @ np.swapaxes(b.data, -1, -2)
            gb = np.swapaxes(a.data, -1, -2) @ g
        return ((a, ga), (b, gb))

    return _node(out, (a, b), back)


def softmax_rows(x):
    """Numerically stable softmax over the last axis (max subtraction)."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def back(g, out=out):
        inner = (g * out).sum(axis=-1, keepdims=True)
        return ((x, out * (g - inner)),)

    return _node(out, (x,), back)


def _binary_shapes(a, b, op):
    if a.shape == b.shape:
        return
    if a.size == 1 or b.size == 1:
        return
    raise DimensionError(
        f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} are not "
        "broadcast-compatible (only scalar-with-tensor broadcast is supported)"
    )


def _reduce_to(shape, g):
    # Reverse a scalar-with-tensor broadcast.
    if g.shape == shape:
        return g
    return g.sum().reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data

    def back(g):
        return ((a, _reduce_to(a.shape, g)), (b, _reduce_to(b.shape, g)))

    return _node(out, (a, b), back)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data

    def back(g):
        return ((a, _reduce_to(a.shape, g)), (b, _reduce_to(b.shape, -g)))

    return _node(out, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = a.data * b.data

    def back(g):
        return ((a, _reduce_to(a.shape, g * b.data)), (b, _reduce_to(b.shape, g * a.data)))

    return _node(out, (a, b), back)


def scale(x, c):
    """Multiply by a python scalar constant."""
    x = as_tensor(x)
    c = float(c)
    out = x.data * c

    def back(g):
        return ((x, g * c),)

    return _node(out, (x,), back)


def tanh(x):
    x = as_tensor(x)
    out = np.tanh(x.data)

    def back(g, out=out):
        return ((x, g * (1.0 - out * out)),)

    return _node(out, (x,), back)


def sigmoid(x):
    x = as_tensor(x)
    # Split by sign to avoid overflow in exp.
    d = x.data
    out = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.clip(d, 0, None))),
                   np.exp(np.clip(d, None, 0)) / (1.0 + np.exp(np.clip(d, None, 0))))

    def back(g, out=out):
        return ((x, g * out * (1.0 - out)),)

    return _node(out, (x,), back)


def relu(x):
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def back(g):
        return ((x, g * (x.data > 0)),)

    return _node(out, (x,), back)


def tsqrt(x):
    """Elementwise square root; inputs must stay strictly positive."""
    x = as_tensor(x)
    out = np.sqrt(x.data)

    def back(g, out=out):
        return ((x, g * (0.5 / out)),)

    return _node(out, (x,), back)


def reciprocal(x):
    x = as_tensor(x)
    out = 1.0 / x.data

    def back(g, out=out):
        return ((x, -g * out * out),)

    return _node(out, (x,), back)


def add_bias(x, b, axis):
    """Add a length-C vector along ``axis`` of x (e.g. channel biases)."""
    x, b = as_tensor(x), as_tensor(b)
    if b.data.ndim != 1 or x.shape[axis] != b.shape[0]:
        raise DimensionError(
            f"add_bias: bias shape {tuple(b.shape)} does not match "
            f"axis {axis} of {tuple(x.shape)}"
        )
    view = [1] * x.data.ndim
    view[axis] = b.shape[0]
    out = x.data + b.data.reshape(view)

    def back(g):
        reduce_axes = tuple(i for i in range(g.ndim) if i != (axis % g.ndim))
        return ((x, g), (b, g.sum(axis=reduce_axes)))

    return _node(out, (x, b), back)


def add_channel_bias(x, b):
    """Add per-sample channel biases [B, C] onto a [B, C, H, W] map."""
    x, b = as_tensor(x), as_tensor(b)
    if x.data.ndim != 4 or b.data.ndim != 2 or x.shape[:2] != b.shape:
        raise DimensionError(
            f"add_channel_bias: biases {tuple(b.shape)} do not match "
            f"leading axes of {tuple(x.shape)}"
        )
    out = x.data + b.data[:, :, None, None]

    def back(g):
        return ((x, g), (b, g.sum(axis=(2, 3))))

    return _node(out, (x, b), back)


def tsum(x):
    x = as_tensor(x)
    out = np.array(x.data.sum())

    def back(g):
        return ((x, np.broadcast_to(g, x.shape).astype(x.dtype)),)

    return _node(out, (x,), back)


def tmean(x):
    x = as_tensor(x)
    out = np.array(x.data.mean())
    n = x.size

    def back(g):
        return ((x, np.broadcast_to(g / n, x.shape).astype(x.dtype)),)

    return _node(out, (x,), back)


def mse(a, b):
    """Mean squared error over all elements (factor 1, no 1/2)."""
    a, b = as_tensor(a), as_tensor(b)
    _binary_shapes(a, b, "mse")
    diff = sub(a, b)
    return tmean(mul(diff, diff))


def reshape(x, shape):
    x = as_tensor(x)
    out = x.data.reshape(shape)

    def back(g):
        return ((x, g.reshape(x.shape)),)

    return _node(out, (x,), back)


def permute(x, axes):
    x = as_tensor(x)
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = np.argsort(axes)

    def back(g):
        return ((x, np.transpose(g, inverse)),)

    return _node(out, (x,), back)


def slice_last(x, lo, hi):
    """Contiguous slice [lo, hi) along the last axis."""
    x = as_tensor(x)
    if not 0 <= lo < hi <= x.shape[-1]:
        raise DimensionError(
            f"slice_last: [{lo}, {hi}) out of bounds for last axis {x.shape[-1]}"
        )
    out = np.ascontiguousarray(x.data[..., lo:hi])

    def back(g):
        gx = np.zeros_like(x.data)
        gx[..., lo:hi] = g
        return ((x, gx),)

    return _node(out, (x,), back)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        pairs = []
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            pairs.append((t, g[tuple(sl)]))
        return tuple(pairs)

    return _node(out, tuple(tensors), back)


def gather_tokens(x, idx):
    """Gather rows of a [B, N, C] token tensor: out[b, j] = x[b, idx[b, j]]."""
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    out = np.take_along_axis(x.data, idx[:, :, None], axis=1)

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.arange(x.shape[0])[:, None], idx), g)
        return ((x, gx),)

    return _node(out, (x,), back)


def scatter_tokens(rows, idx, n_tokens):
    """Scatter [B, k, C] rows into a zero [B, N, C] tensor at ``idx``."""
    rows = as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    b, _, c = rows.shape
    out = np.zeros((b, n_tokens, c), dtype=rows.dtype)
    out[np.arange(b)[:, None], idx] = rows.data

    def back(g):
        return ((rows, np.take_along_axis(g, idx[:, :, None], axis=1)),)

    return _node(out, (rows,), back)


def scale_tokens(x, s):
    """Gate each token row of [B, N, C] by a [B, N] coefficient."""
    x, s = as_tensor(x), as_tensor(s)
    if x.data.ndim != 3 or s.shape != x.shape[:2]:
        raise DimensionError(
            f"scale_tokens: scores {tuple(s.shape)} do not match tokens "
            f"{tuple(x.shape)}"
        )
    out = x.data * s.data[:, :, None]

    def back(g):
        return ((x, g * s.data[:, :, None]), (s, (g * x.data).sum(axis=2)))

    return _node(out, (x, s), back)


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D convolution on [B, Cin, H, W] with kernel [Cout, Cin, k, k]."""
    x, w = as_tensor(x), as_tensor(w)
    bt = as_tensor(b) if b is not None else None
    bsz, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise DimensionError(
            f"conv2d: input channels {cin} != kernel channels {cin_w}"
        )
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((bsz, cout, ho, wo), dtype=x.dtype)
    for ki in range(kh):
        for kj in range(kw):
            patch = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
            out += np.einsum("bchw,oc->bohw", patch, w.data[:, :, ki, kj], optimize=True)
    if bt is not None:
        out += bt.data.reshape(1, cout, 1, 1)

    def back(g):
        gx_p = np.zeros_like(xp)
        gw = np.zeros_like(w.data)
        for ki in range(kh):
            for kj in range(kw):
                patch = xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
                gw[:, :, ki, kj] = np.einsum("bohw,bchw->oc", g, patch, optimize=True)
                gx_p[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += np.einsum(
                    "bohw,oc->bchw", g, w.data[:, :, ki, kj], optimize=True
                )
        gx = gx_p[:, :, padding : padding + h, padding : padding + wd] if padding else gx_p
        pairs = [(x, gx), (w, gw)]
        if bt is not None:
            pairs.append((bt, g.sum(axis=(0, 2, 3))))
        return tuple(pairs)

    parents = (x, w) if bt is None else (x, w, bt)
    return _node(out, parents, back)


def upsample2(x):
    """Nearest-neighbor 2x upsampling of [B, C, H, W]."""
    x = as_tensor(x)
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        b, c, h2, w2 = g.shape
        gx = g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5))
        return ((x, gx),)

    return _node(out, (x,), back)
