"""Minimal deterministic reverse-mode autodiff over dense float64 arrays.

Every learnable quantity in the package flows through :class:`Tensor`. Ops
record parent links and a backward closure on the result node; the graph of
parent links is the tape, and ``backward()`` replays the closures in reverse
topological order. Construction order is deterministic, so replay order (and
therefore gradient accumulation order) is bit-reproducible.

Design choices: float64 everywhere, no fusion, no views that could alias a
mutated buffer into a recorded op. Forward ops validate finiteness; NaN/Inf
raises :class:`NumericError` instead of propagating silently.
"""

import numpy as np

NORM_EPS = 1e-8  # default epsilon inside norms; keeps sqrt differentiable at 0


class NumericError(ArithmeticError):
    """A forward value or a training step produced NaN/Inf."""


def _check_finite(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced by op '{op}'")


class Tensor:
    """Dense float64 n-d array with optional gradient-tape participation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of size {self.data.size}")
        return float(self.data.reshape(()))

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        """Accumulate gradients of this scalar into every requires_grad leaf.

        Replays the recorded backward closures in reverse topological order,
        visiting each node exactly once.
        """
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        self.grad = np.ones_like(self.data)
        for node in reversed(_topo_order(self)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_coerce(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op}, requires_grad={self.requires_grad})"


def _topo_order(root):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in visited:
                stack.append((p, False))
    return order


def _coerce(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _node(data, parents, backward_fn, op):
    _check_finite(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    out._op = op
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    if t.data.shape == ():
        t.grad = t.grad + np.sum(g)
    elif g.shape != t.data.shape:  # size-1 tensor fed through scalar broadcasting
        t.grad = t.grad + np.sum(g).reshape(t.data.shape)
    else:
        t.grad = t.grad + g


def _binary_shapes(a, b, op):
    if a.data.shape == b.data.shape:
        return
    if a.data.size == 1 or b.data.size == 1:
        return
    raise ValueError(f"{op}: shapes {a.data.shape} and {b.data.shape} are not "
                     "compatible (only scalar-vs-tensor and equal-shape broadcasting)")


# -- elementwise ---------------------------------------------------------

def add(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "add")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "sub")

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "mul")

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward, "mul")


def div(a, b):
    a, b = _coerce(a), _coerce(b)
    _binary_shapes(a, b, "div")

    def backward(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _node(a.data / b.data, (a, b), backward, "div")


def relu(a):
    a = _coerce(a)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _node(np.maximum(a.data, 0.0), (a,), backward, "relu")


def exp(a):
    a = _coerce(a)
    out_data = np.exp(a.data)

    def backward(g):
        _accum(a, g * out_data)

    return _node(out_data, (a,), backward, "exp")


def log(a):
    a = _coerce(a)
    if np.any(a.data <= 0):
        raise ValueError("log of non-positive input")

    def backward(g):
        _accum(a, g / a.data)

    return _node(np.log(a.data), (a,), backward, "log")


def sqrt(a):
    a = _coerce(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt of negative input")
    out_data = np.sqrt(a.data)

    def backward(g):
        _accum(a, g / (2.0 * out_data))

    return _node(out_data, (a,), backward, "sqrt")


def sigmoid(a):
    a = _coerce(a)
    out_data = np.where(a.data >= 0,
                        1.0 / (1.0 + np.exp(-np.abs(a.data))),
                        np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))

    def backward(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), backward, "sigmoid")


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div,
                "relu": relu, "exp": exp, "log": log, "sqrt": sqrt,
                "sigmoid": sigmoid}


def elementwise(op, a, b=None):
    """Dispatch an elementwise op by name; binary ops require ``b``."""
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op '{op}'")
    fn = _ELEMENTWISE[op]
    if op in ("add", "sub", "mul", "div"):
        if b is None:
            raise ValueError(f"'{op}' needs two operands")
        return fn(a, b)
    if b is not None:
        raise ValueError(f"'{op}' is unary")
    return fn(a)


def clamp(a, lo, hi):
    """Clip values to [lo, hi]; gradient passes where the input lies inside."""
    a = _coerce(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        _accum(a, g * inside)

    return _node(np.clip(a.data, lo, hi), (a,), backward, "clamp")


def scale_gradient(a, factor):
    """Identity in the forward pass; multiplies the gradient by ``factor``."""
    a = _coerce(a)
    if factor == 1.0:
        return a

    def backward(g):
        _accum(a, g * factor)

    return _node(a.data, (a,), backward, "scale_gradient")


# -- shape ops ------------------------------------------------------------

def reshape(a, shape):
    a = _coerce(a)
    orig = a.data.shape

    def backward(g):
        _accum(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), backward, "reshape")


def transpose2d(a):
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ValueError("transpose2d expects a 2-d tensor")

    def backward(g):
        _accum(a, g.T)

    return _node(np.ascontiguousarray(a.data.T), (a,), backward, "transpose2d")


def broadcast_to(a, shape):
    a = _coerce(a)
    if np.broadcast_shapes(a.data.shape, tuple(shape)) != tuple(shape):
        raise ValueError(f"cannot broadcast {a.data.shape} to {shape}")
    orig = a.data.shape
    ndiff = len(shape) - len(orig)

    def backward(g):
        axes = tuple(range(ndiff)) + tuple(
            i + ndiff for i, n in enumerate(orig) if n == 1 and shape[i + ndiff] != 1)
        gsum = g.sum(axis=axes, keepdims=False) if axes else g
        _accum(a, gsum.reshape(orig))

    return _node(np.ascontiguousarray(np.broadcast_to(a.data, shape)), (a,), backward, "broadcast_to")


def concat(tensors, axis=0):
    """Concatenate along ``axis``; backward splits the gradient back."""
    ts = [_coerce(t) for t in tensors]
    if not ts:
        raise ValueError("concat needs at least one tensor")
    nd = ts[0].data.ndim
    axis = axis % nd
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, off, n in zip(ts, offsets[:-1], sizes):
            sl = [slice(None)] * nd
            sl[axis] = slice(off, off + n)
            _accum(t, g[tuple(sl)])

    return _node(np.concatenate([t.data for t in ts], axis=axis),
                 tuple(ts), backward, "concat")


def index_select(a, axis, indices):
    """Gather slices along ``axis``; backward scatter-adds (duplicates accumulate)."""
    a = _coerce(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("indices must be 1-d")

    def backward(g):
        ga = np.zeros_like(a.data)
        np.add.at(np.moveaxis(ga, axis, 0), idx, np.moveaxis(g, axis, 0))
        _accum(a, ga)

    return _node(np.take(a.data, idx, axis=axis), (a,), backward, "index_select")


# -- reductions -----------------------------------------------------------

def _norm_axes(axes, ndim):
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(ax % ndim for ax in axes)
    if len(set(axes)) != len(axes):
        raise ValueError("duplicate reduction axes")
    return axes


def reduce(op, a, axes=None, keepdims=False):
    """Reduce with 'sum' or 'mean' over ``axes`` (all axes when None)."""
    if op == "sum":
        return tsum(a, axes, keepdims)
    if op == "mean":
        return mean(a, axes, keepdims)
    raise ValueError(f"unknown reduce op '{op}'")


def tsum(a, axes=None, keepdims=False):
    a = _coerce(a)
    axes = _norm_axes(axes, a.data.ndim)
    for ax in axes:
        if a.data.shape[ax] == 0:
            raise ValueError("empty reduction axis")
    kept = a.data.sum(axis=axes, keepdims=True)

    def backward(g):
        gk = g.reshape(kept.shape)
        _accum(a, np.broadcast_to(gk, a.data.shape))

    data = kept if keepdims else kept.reshape(
        tuple(n for i, n in enumerate(a.data.shape) if i not in axes))
    return _node(data, (a,), backward, "sum")


def mean(a, axes=None, keepdims=False):
    a = _coerce(a)
    axes = _norm_axes(axes, a.data.ndim)
    n = 1
    for ax in axes:
        n *= a.data.shape[ax]
    return mul(tsum(a, axes, keepdims), 1.0 / n)


def softmax(a, axis=-1):
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _node(out_data, (a,), backward, "softmax")


def l2norm_rows(a, eps=NORM_EPS):
    """Row norms of an [N, D] tensor: sqrt(sum_d a[n,d]^2 + eps).

    A positive eps keeps the result differentiable at zero rows.
    """
    a = _coerce(a)
    if a.data.ndim != 2:
        raise ValueError("l2norm_rows expects an [N, D] tensor")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return sqrt(add(tsum(mul(a, a), axes=1), eps))


# -- convolution ------------------------------------------------------------

def _pad_chw(x, ph, pw, mode):
    if mode == "zero":
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    if mode == "circular":
        if ph > x.shape[1] or pw > x.shape[2]:
            raise ValueError("circular pad wider than the input")
        return np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode="wrap")
    raise ValueError(f"unknown padding mode '{mode}'")


def _unpad_circular(gp, ph, pw):
    # adjoint of wrap-padding: fold the margins back onto the core
    c, hp, wp = gp.shape
    h, w = hp - 2 * ph, wp - 2 * pw
    t = gp[:, :, pw:pw + w].copy()
    if pw:
        t[:, :, w - pw:] += gp[:, :, :pw]
        t[:, :, :pw] += gp[:, :, pw + w:]
    out = t[:, ph:ph + h, :].copy()
    if ph:
        out[:, h - ph:, :] += t[:, :ph, :]
        out[:, :ph, :] += t[:, ph + h:, :]
    return out


def _im2col(xp, kh, kw, stride, hout, wout):
    c = xp.shape[0]
    cols = np.empty((c, kh, kw, hout, wout), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xp[:, i:i + stride * hout:stride, j:j + stride * wout:stride]
    return cols.reshape(c * kh * kw, hout * wout)


def _col2im(gcols, c, hp, wp, kh, kw, stride, hout, wout):
    g = np.zeros((c, hp, wp), dtype=np.float64)
    gc = gcols.reshape(c, kh, kw, hout, wout)
    for i in range(kh):
        for j in range(kw):
            g[:, i:i + stride * hout:stride, j:j + stride * wout:stride] += gc[:, i, j]
    return g


def conv2d(x, weight, bias=None, stride=1, padding="zero", pad=0):
    """2-d convolution (cross-correlation) of [C_in,H,W] with [C_out,C_in,kh,kw].

    ``pad`` is an int or (pad_h, pad_w); output spatial size is
    floor((H + 2*pad - k) / stride) + 1 per dimension. Circular padding makes
    the operator exactly periodic-equivariant.
    """
    x, weight = _coerce(x), _coerce(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise ValueError("conv2d expects x[C,H,W] and weight[C_out,C_in,kh,kw]")
    c_out, c_in, kh, kw = weight.data.shape
    if x.data.shape[0] != c_in:
        raise ValueError(f"input channels {x.data.shape[0]} != weight c_in {c_in}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel extents must be odd")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    ph, pw = (pad, pad) if isinstance(pad, int) else pad

    xp = _pad_chw(x.data, ph, pw, padding)
    hp, wp = xp.shape[1], xp.shape[2]
    hout = (hp - kh) // stride + 1
    wout = (wp - kw) // stride + 1
    if hout < 1 or wout < 1:
        raise ValueError("kernel larger than padded input")

    cols = _im2col(xp, kh, kw, stride, hout, wout)
    w2 = weight.data.reshape(c_out, -1)
    out = (w2 @ cols).reshape(c_out, hout, wout)
    if bias is not None:
        bias = _coerce(bias)
        if bias.data.shape != (c_out,):
            raise ValueError("bias must have shape (C_out,)")
        out = out + bias.data[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(c_out, -1)
        if weight.requires_grad:
            _accum(weight, (g2 @ cols.T).reshape(weight.data.shape))
        if bias is not None and bias.requires_grad:
            _accum(bias, g.sum(axis=(1, 2)))
        if x.requires_grad:
            gcols = w2.T @ g2
            gxp = _col2im(gcols, c_in, hp, wp, kh, kw, stride, hout, wout)
            if padding == "circular":
                _accum(x, _unpad_circular(gxp, ph, pw))
            else:
                gx = gxp[:, ph:ph + x.data.shape[1], pw:pw + x.data.shape[2]]
                _accum(x, np.ascontiguousarray(gx))

    return _node(out, parents, backward, "conv2d")


def same_pad(k):
    """Padding that preserves spatial size for an odd kernel extent at stride 1."""
    if k % 2 == 0:
        raise ValueError("same_pad requires an odd kernel")
    return (k - 1) // 2


# -- gradient checking ------------------------------------------------------

def grad_check(f, x, h=1e-5):
    """Compare analytic gradients of scalar ``f`` against central differences.

    Returns the max over coordinates of
    |analytic - central_difference| / max(1, |central_difference|).
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError("h must lie in [1e-6, 1e-3]")
    xt = Tensor(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
                requires_grad=True)
    out = f(xt)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ValueError("f must return a scalar tensor")
    out.backward()
    analytic = np.zeros_like(xt.data) if xt.grad is None else xt.grad

    base = xt.data.copy()
    flat = base.ravel()
    max_rel = 0.0
    for i in range(flat.size):
        probe = base.copy()
        probe.ravel()[i] = flat[i] + h
        fp = f(Tensor(probe)).item()
        probe.ravel()[i] = flat[i] - h
        fm = f(Tensor(probe)).item()
        fd = (fp - fm) / (2.0 * h)
        rel = abs(analytic.ravel()[i] - fd) / max(1.0, abs(fd))
        max_rel = max(max_rel, rel)
    return max_rel
