"""Dense tensors with reverse-mode differentiation on top of numpy.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure mapping the output gradient to parent gradients. ``backward`` walks
the recorded graph in reverse topological order.
"""

import contextlib

import numpy as np

from ..errors import InvalidArgument, ShapeError

_DEFAULT_DTYPE = np.float64
_GRAD_ENABLED = True
_DEBUG_NAN = False


def set_default_dtype(dtype):
    global _DEFAULT_DTYPE
    _DEFAULT_DTYPE = np.dtype(dtype).type


def get_default_dtype():
    return _DEFAULT_DTYPE


@contextlib.contextmanager
def default_dtype(dtype):
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


@contextlib.contextmanager
def debug_nan():
    """Raise as soon as any op produces a non-finite value."""
    global _DEBUG_NAN
    old = _DEBUG_NAN
    _DEBUG_NAN = True
    try:
        yield
    finally:
        _DEBUG_NAN = old


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            arr = np.asarray(data)
            dtype = arr.dtype if np.issubdtype(arr.dtype, np.floating) else _DEFAULT_DTYPE
        self.data = np.array(data, dtype=dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents, backward):
        """Create an op output. ``backward(g)`` returns one gradient (or None)
        per parent."""
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        parents = tuple(parents)
        out.requires_grad = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        if _DEBUG_NAN and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite value produced in graph")
        return out

    # -- basic properties -------------------------------------------------
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
        return self.data.item()

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    # -- backward ---------------------------------------------------------
    def backward(self, seed=None):
        if seed is None:
            if self.data.size != 1:
                raise InvalidArgument(
                    f"backward on non-scalar tensor of shape {self.shape} needs an explicit seed"
                )
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.data.dtype)
            if seed.shape != self.shape:
                raise ShapeError(f"seed shape {seed.shape} does not match tensor shape {self.shape}")
        if not self.requires_grad:
            return

        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): seed}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for p, pg in zip(node._parents, parent_grads):
                if pg is None or not p.requires_grad:
                    continue
                pg = _unbroadcast(np.asarray(pg), p.shape)
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operators ----------------------------------------------------------
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

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

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return self.swapaxes(-1, -2)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE) if not isinstance(x, np.ndarray) else x)


def _const(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# -- elementwise binary ---------------------------------------------------
def add(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "add")
    return Tensor.from_op(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "sub")
    return Tensor.from_op(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "mul")
    return Tensor.from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return Tensor.from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def power(a, p):
    a = as_tensor(a)
    p = float(p)
    return Tensor.from_op(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def maximum(a, b):
    """Elementwise max; ties send the gradient to ``a``."""
    a = as_tensor(a)
    b = _const(b, a)
    _check_broadcast(a, b, "maximum")
    mask = a.data >= b.data
    return Tensor.from_op(
        np.where(mask, a.data, b.data), (a, b), lambda g: (g * mask, g * ~mask)
    )


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    a = as_tensor(a)
    b = _const(b, a)
    return Tensor.from_op(
        np.where(cond, a.data, b.data), (a, b), lambda g: (g * cond, g * ~cond)
    )


# -- elementwise unary ----------------------------------------------------
def exp(a):
    out = np.exp(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * out,))


def log(a):
    return Tensor.from_op(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a):
    return Tensor.from_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a):
    mask = a.data > 0
    return Tensor.from_op(a.data * mask, (a,), lambda g: (g * mask,))


def sin(a):
    return Tensor.from_op(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),))


def cos(a):
    return Tensor.from_op(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),))


def tanh(a):
    out = np.tanh(a.data)
    return Tensor.from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(a):
    """GELU, tanh form: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def backward(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner),)

    return Tensor.from_op(out.astype(x.dtype, copy=False), (a,), backward)


def stop_gradient(a):
    """``sg[a]``: same value, contributes no gradient."""
    return Tensor(as_tensor(a).data)


# -- reductions and shape ops ---------------------------------------------
def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return Tensor.from_op(np.asarray(out), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {a.shape} into {shape}") from None
    return Tensor.from_op(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return Tensor.from_op(out, (a,), lambda g: (np.transpose(g, inv),))


def getitem(a, idx):
    out = a.data[idx]

    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return Tensor.from_op(np.array(out), (a,), backward)


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is Ellipsis or i is None for i in items)


def take_rows(table, idx):
    """``table[idx]`` along the first axis (embedding lookup)."""
    idx = np.asarray(idx)
    out = table.data[idx]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (full,)

    return Tensor.from_op(out, (table,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor.from_op(out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op(out, tensors, backward)


# -- linear algebra ---------------------------------------------------------
def matmul(a, b):
    a = as_tensor(a)
    b = _const(b, a)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    out = a.data @ b.data

    def backward(g):
        return (g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g)

    return Tensor.from_op(out, (a, b), backward)


def cross(a, b):
    """Cross product along the last axis."""
    a = as_tensor(a)
    b = _const(b, a)
    out = np.cross(a.data, b.data)
    return Tensor.from_op(out, (a, b), lambda g: (np.cross(b.data, g), np.cross(g, a.data)))


def norm(a, axis=-1, keepdims=False):
    return sqrt(tsum(a * a, axis=axis, keepdims=keepdims))


def softmax(a, axis=-1):
    x = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return Tensor.from_op(out, (a,), backward)


def conv1d(x, weight, bias=None):
    """Stride-1 convolution with 'same' zero padding.

    x: (B, C_in, L); weight: (C_out, C_in, k) with odd k; bias: (C_out,).
    """
    if x.ndim != 3 or weight.ndim != 3:
        raise ShapeError(f"conv1d expects (B,C,L) input and (O,C,k) weight, got {x.shape} and {weight.shape}")
    bsz, cin, length = x.shape
    cout, wcin, k = weight.shape
    if wcin != cin:
        raise ShapeError(f"conv1d: input channels {x.shape} do not match weight {weight.shape}")
    if k % 2 != 1:
        raise ShapeError(f"conv1d: kernel size must be odd for same padding, got {weight.shape}")
    pad = k // 2
    xp = np.zeros((bsz, length + 2 * pad, cin), dtype=x.dtype)
    xp[:, pad : pad + length, :] = x.data.transpose(0, 2, 1)
    # cols[b*L + l, t*C + c] = xp[b, l + t, c]; one GEMM covers the batch
    cols = np.empty((bsz, length, k, cin), dtype=x.dtype)
    for t in range(k):
        cols[:, :, t, :] = xp[:, t : t + length, :]
    cols = cols.reshape(bsz * length, k * cin)
    wmat = weight.data.transpose(0, 2, 1).reshape(cout, k * cin)
    out2 = cols @ wmat.T
    if bias is not None:
        out2 += bias.data
    out = np.ascontiguousarray(out2.reshape(bsz, length, cout).transpose(0, 2, 1))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(bsz * length, cout)
        gw = (g2.T @ cols).reshape(cout, k, cin).transpose(0, 2, 1)
        gcols = (g2 @ wmat).reshape(bsz, length, k, cin)
        gxp = np.zeros_like(xp)
        for t in range(k):
            gxp[:, t : t + length, :] += gcols[:, :, t, :]
        gx = np.ascontiguousarray(gxp[:, pad : pad + length, :].transpose(0, 2, 1))
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor.from_op(out, parents, backward)


# -- losses -------------------------------------------------------------------
def l1_loss(a, b):
    """Mean absolute difference."""
    return mean(tabs(a - b))


def l2sq_loss(a, b):
    """Mean squared difference."""
    d = a - b
    return mean(d * d)
