"""Dense-tensor reverse-mode automatic differentiation on numpy arrays.

Scope is exactly what the denoiser needs: matmul, bias add, SiLU, strided
2D convolution, group normalization, concatenation, slicing, reshapes,
means, sinusoidal step embeddings, and mean-squared error. Forward values
are checked for NaN/Inf after every op and raise NonFiniteValue naming the
producing op. Gradient accumulation follows one fixed topological order,
so backward passes are bit-reproducible.

Tensors carry float32 or float64 data; mixing dtypes in one op is an
error. Tests run the graph in double precision, training in single.
"""

from __future__ import annotations

import math

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteValue(FloatingPointError):
    pass


class GraphCycle(RuntimeError):
    pass


_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents=(), backward=None):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not np.isfinite(arr).all():
            raise NonFiniteValue(f"non-finite values produced by op {op!r}")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, grad={self.grad is not None})"


def _check_same_dtype(op, *tensors):
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeMismatch(f"{op}: mixed dtypes {sorted(map(str, dtypes))}")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _result(op, data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, op=op, parents=parents,
                  backward=backward if needs else None)


def _binary(op, a: Tensor, b: Tensor, fwd, da, db):
    _check_same_dtype(op, a, b)
    try:
        out = fwd(a.data, b.data)
    except ValueError as e:
        raise ShapeMismatch(f"{op}: {a.shape} vs {b.shape}") from e

    def backward(g):
        return (_unbroadcast(da(g), a.shape).astype(a.dtype, copy=False),
                _unbroadcast(db(g), b.shape).astype(b.dtype, copy=False))

    return _result(op, out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g: g, lambda g: g)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g: g, lambda g: -g)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        return (_unbroadcast(g * b.data, a.shape).astype(a.dtype, copy=False),
                _unbroadcast(g * a.data, b.shape).astype(b.dtype, copy=False))
    _check_same_dtype("mul", a, b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from e
    return _result("mul", out, (a, b), backward)


def add_scalar(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _result("add_scalar", a.data + s, (a,), lambda g: (g,))


def scale(a: Tensor, s: float) -> Tensor:
    s = a.dtype.type(s)
    return _result("scale", a.data * s, (a,), lambda g: (g * s,))


def pow_scalar(a: Tensor, p: float) -> Tensor:
    out = a.data ** p

    def backward(g):
        return ((g * p * a.data ** (p - 1)).astype(a.dtype, copy=False),)

    return _result("pow_scalar", out, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return (g @ b.data.T, a.data.T @ g)

    return _result("matmul", out, (a, b), backward)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """(N, D) + (D,) or (N, C, H, W) + (C,)."""
    _check_same_dtype("bias_add", x, b)
    if b.data.ndim != 1:
        raise ShapeMismatch(f"bias_add: bias must be 1D, got {b.shape}")
    if x.data.ndim == 2 and x.shape[1] == b.shape[0]:
        out = x.data + b.data

        def backward(g):
            return (g, g.sum(axis=0))
    elif x.data.ndim == 4 and x.shape[1] == b.shape[0]:
        out = x.data + b.data[None, :, None, None]

        def backward(g):
            return (g, g.sum(axis=(0, 2, 3)))
    else:
        raise ShapeMismatch(f"bias_add: {x.shape} + {b.shape}")
    return _result("bias_add", out, (x, b), backward)


def silu(x: Tensor) -> Tensor:
    sig = 1.0 / (1.0 + np.exp(-x.data))
    out = x.data * sig

    def backward(g):
        return ((g * (sig * (1.0 + x.data * (1.0 - sig)))).astype(x.dtype, copy=False),)

    return _result("silu", out, (x,), backward)


def reshape(x: Tensor, shape) -> Tensor:
    if int(np.prod(shape)) != x.data.size and -1 not in shape:
        raise ShapeMismatch(f"reshape: {x.shape} -> {shape}")
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)

    return _result("reshape", out, (x,), backward)


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    _check_same_dtype("concat", *tensors)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from e
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result("concat", out, tuple(tensors), backward)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= start < stop <= x.shape[1]):
        raise ShapeMismatch(f"slice_cols: [{start}:{stop}] of {x.shape}")
    out = x.data[:, start:stop]

    def backward(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _result("slice_cols", out, (x,), backward)


def mean_axes(x: Tensor, axes, keepdims: bool = True) -> Tensor:
    axes = tuple(axes)
    out = x.data.mean(axis=axes, keepdims=keepdims)
    count = x.dtype.type(np.prod([x.shape[a] for a in axes]))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype, copy=False),)

    return _result("mean_axes", out, (x,), backward)


def mean_all(x: Tensor) -> Tensor:
    out = x.data.mean()
    n = x.dtype.type(x.data.size)

    def backward(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return _result("mean_all", out, (x,), backward)


def mse(pred: Tensor, target: Tensor) -> Tensor:
    _check_same_dtype("mse", pred, target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    out = (diff * diff).mean()
    n = pred.dtype.type(diff.size)

    def backward(g):
        gd = (2.0 * g / n) * diff
        return (gd.astype(pred.dtype, copy=False), (-gd).astype(pred.dtype, copy=False))

    return _result("mse", out, (pred, target), backward)


def _im2col(x: np.ndarray, k: int, stride: int, pad: int):
    n, c, h, w = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]                  # (n, c, ho, wo, k, k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return np.ascontiguousarray(cols), ho, wo


def _col2im(gcols: np.ndarray, x_shape, k: int, stride: int, pad: int, ho: int, wo: int):
    n, c, h, w = x_shape
    gx = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=gcols.dtype)
    g6 = gcols.reshape(n, ho, wo, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            gx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += g6[:, :, :, :, i, j]
    if pad:
        gx = gx[:, :, pad:-pad, pad:-pad]
    return gx


def conv2d(x: Tensor, w: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """x (N, C, H, W) with kernel w (O, C, k, k), square kernel."""
    _check_same_dtype("conv2d", x, w)
    if x.data.ndim != 4 or w.data.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ShapeMismatch(f"conv2d: x {x.shape}, w {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeMismatch(f"conv2d: channel mismatch {x.shape} vs {w.shape}")
    n, c, h, wid = x.shape
    o, _, k, _ = w.shape
    if h + 2 * pad < k or wid + 2 * pad < k:
        raise ShapeMismatch(f"conv2d: kernel {k} larger than padded input {x.shape}")
    cols, ho, wo = _im2col(x.data, k, stride, pad)
    wmat = w.data.reshape(o, c * k * k)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)

    def backward(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, o)
        gw = (gmat.T @ cols).reshape(w.shape)
        gcols = gmat @ wmat
        gx = _col2im(gcols, x.shape, k, stride, pad, ho, wo)
        return (gx, gw)

    return _result("conv2d", np.ascontiguousarray(out), (x, w), backward)


def group_norm(x: Tensor, gamma: Tensor, beta: Tensor, groups: int,
               eps: float = 1e-5) -> Tensor:
    """Normalize (N, C, H, W) over per-group statistics, then scale/shift."""
    if x.data.ndim != 4:
        raise ShapeMismatch(f"group_norm: expected NCHW, got {x.shape}")
    n, c, h, w = x.shape
    if c % groups or gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(
            f"group_norm: channels {c}, groups {groups}, gamma {gamma.shape}, beta {beta.shape}")
    xg = reshape(x, (n, groups, (c // groups) * h * w))
    mu = mean_axes(xg, (2,), keepdims=True)
    cen = sub(xg, mu)
    var = mean_axes(mul(cen, cen), (2,), keepdims=True)
    inv = pow_scalar(add_scalar(var, eps), -0.5)
    xn = reshape(mul(cen, inv), x.shape)
    scale_t = reshape(gamma, (1, c, 1, 1))
    shift_t = reshape(beta, (1, c, 1, 1))
    return add(mul(xn, scale_t), shift_t)


def sin_embedding(steps, dim: int, dtype=np.float64) -> Tensor:
    """Sinusoidal embedding of integer steps, shape (len(steps), dim)."""
    if dim < 2 or dim % 2:
        raise ShapeMismatch(f"sin_embedding: dim must be even and >= 2, got {dim}")
    steps = np.asarray(steps, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = steps[:, None] * freqs[None, :]
    out = np.concatenate([np.sin(ang), np.cos(ang)], axis=1).astype(dtype)
    return Tensor(out, op="sin_embedding")


def _toposort(root: Tensor):
    order = []
    state = {}                      # id -> 1 visiting, 2 done
    stack = [(root, iter(root._parents))]
    state[id(root)] = 1
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            s = state.get(id(p))
            if s == 1:
                raise GraphCycle(f"cycle through op {p.op!r}")
            if s is None:
                state[id(p)] = 1
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            state[id(node)] = 2
            order.append(node)
            stack.pop()
    return order                    # parents before children


def backward(loss: Tensor) -> None:
    """Populate .grad over the graph below a scalar loss.

    Grads of every node in the graph are overwritten (not accumulated
    across calls). Parameters outside the graph are untouched; callers
    treat their gradient as zero.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")
    order = _toposort(loss)
    for node in order:
        node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for parent, g in zip(node._parents, grads):
            if not (parent.requires_grad or parent._backward is not None):
                continue
            if g.shape != parent.data.shape:
                raise ShapeMismatch(
                    f"backward of {node.op!r}: grad {g.shape} vs data {parent.data.shape}")
            if parent.grad is None:
                parent.grad = g.astype(parent.dtype, copy=True)
            else:
                parent.grad += g
