"""Minimal dense-tensor engine with reverse-mode automatic differentiation.

A Tensor wraps a float64 numpy buffer and remembers how it was produced.
backward() walks the tape in reverse topological order and accumulates
gradients into every reachable tensor that asked for them.  The op set is
exactly what the motion predictor needs; there is no graph compiler and no
broadcasting beyond matrix-plus-row-vector bias adds.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    # convenience operators; all route through the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Named trainable tensor; always grad-enabled."""

    __slots__ = ("name",)

    def __init__(self, data, name: str):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self):
        return f"Parameter({self.name}, shape={self.data.shape})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    """Build a result node, recording the tape only when needed."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=parents, _backward=backward)
    return Tensor(data)


def _accum(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def backward(loss: Tensor):
    """Reverse pass from a scalar loss; grads accumulate across calls."""
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar, got shape {loss.data.shape}")
    # iterative topo sort (windows can get deep with many layers)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    _accum(loss, np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise / structural ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    """a + b; b may be a row vector bias against a 2-d a."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g, b.data.shape))

    return _make(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(-g, b.data.shape))

    return _make(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    """Hadamard product."""
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), bwd)


def scale(a, s: float) -> Tensor:
    a = _as_tensor(a)
    s = float(s)
    out = a.data * s

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * s)

    return _make(out, (a,), bwd)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back down to the shape it broadcast up from."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _make(out, (a, b), bwd)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = a.data.T

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.T)

    return _make(out, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    out = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g.reshape(a.data.shape))

    return _make(out, (a,), bwd)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start:stop] of a 2-d tensor."""
    a = _as_tensor(a)
    out = a.data[:, start:stop]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            _accum(a, full)

    return _make(out, (a,), bwd)


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    widths = [p.data.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                _accum(p, g[:, off:off + w])
            off += w

    return _make(out, tuple(parts), bwd)


def add_n(parts: list[Tensor]) -> Tensor:
    """Sum of same-shape tensors (used to pool per-sample losses)."""
    parts = [_as_tensor(p) for p in parts]
    out = parts[0].data.copy()
    for p in parts[1:]:
        out = out + p.data

    def bwd(g):
        for p in parts:
            if p.requires_grad:
                _accum(p, g)

    return _make(out, tuple(parts), bwd)


# ---------------------------------------------------------------------------
# reductions and row selections
# ---------------------------------------------------------------------------

def sum_all(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum()

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.full_like(a.data, float(g)))

    return _make(out, (a,), bwd)


def mean_axis0(a: Tensor) -> Tensor:
    """Mean over rows; (n, d) -> (1, d)."""
    a = _as_tensor(a)
    n = a.data.shape[0]
    out = a.data.mean(axis=0, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.repeat(g / n, n, axis=0))

    return _make(out, (a,), bwd)


def sum_axis0(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    n = a.data.shape[0]
    out = a.data.sum(axis=0, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            _accum(a, np.repeat(g, n, axis=0))

    return _make(out, (a,), bwd)


def last_row(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = a.data[-1:, :]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[-1:, :] = g
            _accum(a, full)

    return _make(out, (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalizations
# ---------------------------------------------------------------------------

def softmax_lastdim(a: Tensor) -> Tensor:
    """Numerically stable softmax over the last axis."""
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        if a.requires_grad:
            dot = (g * out).sum(axis=-1, keepdims=True)
            _accum(a, (g - dot) * out)

    return _make(out, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * out * (1.0 - out))

    return _make(out, (a,), bwd)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU."""
    a = _as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bwd(g):
        if a.requires_grad:
            dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
            d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
            _accum(a, g * d)

    return _make(out, (a,), bwd)


def layernorm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over the last axis, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    sigma = np.sqrt(var + eps)
    y = (x.data - mu) / sigma
    out = y * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            _accum(gain, _unbroadcast(g * y, gain.data.shape))
        if bias.requires_grad:
            _accum(bias, _unbroadcast(g, bias.data.shape))
        if x.requires_grad:
            dy = g * gain.data
            m1 = dy.mean(axis=-1, keepdims=True)
            m2 = (dy * y).mean(axis=-1, keepdims=True)
            _accum(x, (dy - m1 - y * m2) / sigma)

    return _make(out, (x, gain, bias), bwd)


# ---------------------------------------------------------------------------
# dynamic gather
# ---------------------------------------------------------------------------

def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values into [lo, hi]; gradient is zero outside."""
    a = _as_tensor(a)
    out = np.clip(a.data, lo, hi)
    inside = (a.data > lo) & (a.data < hi)

    def bwd(g):
        if a.requires_grad:
            _accum(a, g * inside)

    return _make(out, (a,), bwd)


def gather_interp(e: Tensor, idx: Tensor) -> Tensor:
    """Per-channel linear interpolation along the token axis.

    out[i, j] = E[idx[i, j], j] with idx holding real-valued positions
    already clamped into [0, n-1].  Differentiable in both arguments; at
    integer positions the idx-gradient takes the right-hand slope.
    """
    e, idx = _as_tensor(e), _as_tensor(idx)
    n, d = e.data.shape
    pos = idx.data
    if n == 1:
        lo = np.zeros_like(pos, dtype=np.int64)
        frac = np.zeros_like(pos)
    else:
        lo = np.minimum(np.floor(pos), n - 2).astype(np.int64)
        lo = np.maximum(lo, 0)
        frac = pos - lo
    cols = np.broadcast_to(np.arange(d), pos.shape)
    e_lo = e.data[lo, cols]
    e_hi = e.data[np.minimum(lo + 1, n - 1), cols]
    out = e_lo * (1.0 - frac) + e_hi * frac

    def bwd(g):
        if e.requires_grad:
            ge = np.zeros_like(e.data)
            np.add.at(ge, (lo, cols), g * (1.0 - frac))
            np.add.at(ge, (np.minimum(lo + 1, n - 1), cols), g * frac)
            _accum(e, ge)
        if idx.requires_grad:
            _accum(idx, g * (e_hi - e_lo))

    return _make(out, (e, idx), bwd)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def smooth_l1(pred: Tensor, target: np.ndarray) -> Tensor:
    """Smooth-L1 summed over components, averaged over rows.

    Elementwise 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise; pred and target
    are (batch, k).
    """
    pred = _as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ValueError(f"smooth_l1 shape mismatch: {pred.data.shape} vs {target.shape}")
    x = pred.data - target
    ax = np.abs(x)
    vals = np.where(ax < 1.0, 0.5 * x ** 2, ax - 0.5)
    b = pred.data.shape[0]
    out = vals.sum() / b

    def bwd(g):
        if pred.requires_grad:
            d = np.where(ax < 1.0, x, np.sign(x))
            _accum(pred, float(g) * d / b)

    return _make(out, (pred,), bwd)
