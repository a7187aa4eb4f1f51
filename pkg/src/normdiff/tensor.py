"""Minimal reverse-mode autodiff on dense float64 numpy arrays.

Everything trainable in this package (the KL autoencoder and the token
transformer denoiser) is built from the primitives here. The tape is
deliberately small: each op records its parents and a closure that
accumulates gradients into them; `Tensor.backward()` on a scalar loss
runs the closures in reverse topological order. All math is 64-bit so
central finite differences agree with analytic gradients to high
precision (see `optim.grad_check`).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError

__all__ = [
    "Tensor",
    "constant",
    "parameter",
    "linear",
    "layer_norm",
    "attention",
    "softmax",
    "sigmoid",
    "swish",
    "conv3d",
    "upsample_nearest3d",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """A node in the tape: float64 data plus an optional gradient."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.grad: np.ndarray | None = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        g = _unbroadcast(np.asarray(g, dtype=np.float64), self.data.shape)
        # .grad is never mutated in place, so sharing g between parents is safe
        self.grad = g if self.grad is None else self.grad + g

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar output."""
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- operator sugar ----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return tslice(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}{tag})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name: str) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req,
                  _parents=tuple(p for p in parents if p.requires_grad),
                  _backward=backward if req else None)


# ---- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.data)
        if b.requires_grad:
            b._accumulate(g * a.data)

    return _make(out_data, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / b.data)
        if b.requires_grad:
            b._accumulate(-g * a.data / (b.data * b.data))

    return _make(out_data, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data ** p

    def backward(g):
        a._accumulate(g * p * a.data ** (p - 1))

    return _make(out_data, (a,), backward)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def backward(g):
        a._accumulate(g / a.data)

    return _make(out_data, (a,), backward)


def absolute(a) -> Tensor:
    a = _as_tensor(a)
    out_data = np.abs(a.data)

    def backward(g):
        a._accumulate(g * np.sign(a.data))

    return _make(out_data, (a,), backward)


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with pass-through gradient inside [lo, hi]."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        a._accumulate(g * mask)

    return _make(out_data, (a,), backward)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def swish(a) -> Tensor:
    """x * sigmoid(x), the Swish/SiLU activation."""
    a = _as_tensor(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    out_data = a.data * s

    def backward(g):
        a._accumulate(g * (s + a.data * s * (1.0 - s)))

    return _make(out_data, (a,), backward)


# ---- shape -----------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.data.shape))

    return _make(out_data, (a,), backward)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out_data = a.data.transpose(axes)

    def backward(g):
        a._accumulate(g.transpose(inv))

    return _make(out_data, (a,), backward)


def tslice(a, key) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data[key]

    def backward(g):
        full = np.zeros_like(a.data)
        full[key] = g
        a._accumulate(full)

    return _make(out_data, (a,), backward)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape))
        else:
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = _as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis, keepdims), 1.0 / n)


# ---- linear algebra --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    out_data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape))

    return _make(out_data, (a, b), backward)


def linear(weights, bias, x) -> Tensor:
    """Affine map over the trailing axis: y = x W^T + b.

    `weights` has shape (out, in), `bias` shape (out,), and `x` any shape
    ending in `in`.
    """
    w, b, x = _as_tensor(weights), _as_tensor(bias), _as_tensor(x)
    if x.shape[-1] != w.shape[-1]:
        raise DimensionError(
            f"linear: x trailing axis {x.shape} does not match weights {w.shape}")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not match weights {w.shape}")
    out_data = x.data @ w.data.T + b.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data)
        if w.requires_grad:
            gm = g.reshape(-1, g.shape[-1])
            xm = x.data.reshape(-1, x.data.shape[-1])
            w._accumulate(gm.T @ xm)
        if b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return _make(out_data, (w, b, x), backward)


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalize the trailing axis to zero mean, unit variance.

    No elementwise affine; scale and shift are applied externally by the
    conditioning modulation.
    """
    x = _as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (x.data - mu) * inv
    n = x.data.shape[-1]

    def backward(g):
        gy_sum = g.sum(axis=-1, keepdims=True)
        gyy_sum = (g * y).sum(axis=-1, keepdims=True)
        x._accumulate((inv / n) * (n * g - gy_sum - y * gyy_sum))

    return _make(y, (x,), backward)


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        x._accumulate(s * (g - dot))

    return _make(s, (x,), backward)


def attention(q, k, v) -> Tensor:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d)) V.

    Q, K, V share a (..., n, d) shape; each output row is a convex
    combination of the rows of V.
    """
    q, k, v = _as_tensor(q), _as_tensor(k), _as_tensor(v)
    if not (q.shape == k.shape == v.shape):
        raise DimensionError(f"attention: Q/K/V shapes differ: {q.shape}, {k.shape}, {v.shape}")
    d = q.shape[-1]
    scores = mul(matmul(q, transpose(k, (*range(k.data.ndim - 2), k.data.ndim - 1, k.data.ndim - 2))),
                 1.0 / np.sqrt(d))
    return matmul(softmax(scores, axis=-1), v)


# ---- convolution stack -----------------------------------------------------

def conv3d(x, w, b, stride: int = 1, padding: int = 0) -> Tensor:
    """3D convolution, channels-first: x (B,Cin,D1,D2,D3), w (Cout,Cin,k,k,k)."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    B, cin, d1, d2, d3 = x.shape
    cout, cin_w, k, _, _ = w.shape
    if cin != cin_w:
        raise DimensionError(f"conv3d: input channels {x.shape} vs kernel {w.shape}")
    s, p = stride, padding
    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p), (p, p))) if p else x.data
    view = np.lib.stride_tricks.sliding_window_view(xp, (k, k, k), axis=(2, 3, 4))
    view = view[:, :, ::s, ::s, ::s]
    o1, o2, o3 = view.shape[2:5]
    # (B,Cin,O1,O2,O3,k,k,k) -> (B*O, Cin*k^3)
    cols = view.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(B * o1 * o2 * o3, cin * k ** 3)
    wmat = w.data.reshape(cout, cin * k ** 3)
    out = (cols @ wmat.T + b.data).reshape(B, o1, o2, o3, cout).transpose(0, 4, 1, 2, 3)

    def backward(g):
        gm = g.transpose(0, 2, 3, 4, 1).reshape(-1, cout)
        if w.requires_grad:
            w._accumulate((gm.T @ cols).reshape(w.shape))
        if b.requires_grad:
            b._accumulate(gm.sum(axis=0))
        if x.requires_grad:
            gcols = (gm @ wmat).reshape(B, o1, o2, o3, cin, k, k, k)
            gxp = np.zeros((B, cin, d1 + 2 * p, d2 + 2 * p, d3 + 2 * p))
            for i in range(k):
                for j in range(k):
                    for l in range(k):
                        gxp[:, :, i:i + s * o1:s, j:j + s * o2:s, l:l + s * o3:s] += \
                            gcols[..., i, j, l].transpose(0, 4, 1, 2, 3)
            x._accumulate(gxp[:, :, p:p + d1, p:p + d2, p:p + d3] if p else gxp)

    return _make(out, (x, w, b), backward)


def upsample_nearest3d(x, factor: int = 2) -> Tensor:
    """Nearest-neighbor upsampling of the three trailing spatial axes."""
    x = _as_tensor(x)
    f = factor
    out_data = x.data.repeat(f, axis=2).repeat(f, axis=3).repeat(f, axis=4)
    B, c, d1, d2, d3 = x.shape

    def backward(g):
        g = g.reshape(B, c, d1, f, d2, f, d3, f)
        x._accumulate(g.sum(axis=(3, 5, 7)))

    return _make(out_data, (x,), backward)
