"""Dense float64 tensors with a reverse-mode gradient tape.

Only the handful of operations the network needs are provided. Every op
builds its output eagerly and, when any input participates in
differentiation, records a backward rule on the output node. ``backward``
replays those rules in reverse execution order.
"""
from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_counter = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_seq", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self._seq = next(_counter)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a 1-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape: Sequence[int], requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=DTYPE), requires_grad=requires_grad)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    parents = tuple(parents)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=DTYPE, copy=True)
    else:
        t.grad += g


def _check_4d(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise ShapeError(f"{what} expects a 4-D (n, c, h, w) tensor, got shape {x.shape}")


def _same_shape(x: Tensor, y: Tensor, op: str) -> None:
    if x.shape != y.shape:
        raise ShapeError(f"{op}: shape mismatch {x.shape} vs {y.shape}")


# ---------------------------------------------------------------- elementwise


def add(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "add")

    def backward(g):
        _accumulate(x, g)
        _accumulate(y, g)

    return _make(x.data + y.data, (x, y), backward)


def sub(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "sub")

    def backward(g):
        _accumulate(x, g)
        _accumulate(y, -g)

    return _make(x.data - y.data, (x, y), backward)


def mul(x: Tensor, y: Tensor) -> Tensor:
    _same_shape(x, y, "mul")

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g * y.data)
        if y.requires_grad:
            _accumulate(y, g * x.data)

    return _make(x.data * y.data, (x, y), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0  # relu'(0) = 0

    def backward(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), (x,), backward)


def _sigmoid(a: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)

    def backward(g):
        _accumulate(x, g * s * (1.0 - s))

    return _make(s, (x,), backward)


def softplus(x: Tensor) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = x.data
    out = np.maximum(a, 0.0) + np.log1p(np.exp(-np.abs(a)))

    def backward(g):
        _accumulate(x, g * _sigmoid(a))

    return _make(out, (x,), backward)


def const_mul(x: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a constant (non-differentiated) array of the same shape."""
    c = np.asarray(c, dtype=DTYPE)
    if c.shape != x.shape:
        raise ShapeError(f"const_mul: shape mismatch {x.shape} vs {c.shape}")

    def backward(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), backward)


# ----------------------------------------------------------------- reductions


def reduce_sum(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    """Sum over ``axes`` (all by default), keeping dims so results stay 4-D."""
    if axes is None:
        axes = tuple(range(x.data.ndim))
    out = x.data.sum(axis=axes, keepdims=True)

    def backward(g):
        _accumulate(x, np.broadcast_to(g, x.shape))

    return _make(out, (x,), backward)


def reduce_mean(x: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.data.ndim))
    count = int(np.prod([x.shape[a] for a in axes]))
    return scale(reduce_sum(x, axes), 1.0 / count)


def div(x: Tensor, y: Tensor) -> Tensor:
    """Elementwise x / y for identically shaped operands."""
    _same_shape(x, y, "div")
    q = x.data / y.data

    def backward(g):
        if x.requires_grad:
            _accumulate(x, g / y.data)
        if y.requires_grad:
            _accumulate(y, -g * q / y.data)

    return _make(q, (x, y), backward)


def rsub_scalar(c: float, x: Tensor) -> Tensor:
    """c - x."""

    def backward(g):
        _accumulate(x, -g)

    return _make(float(c) - x.data, (x,), backward)


def stack_scalars(items: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-element tensors along the batch axis -> (k, 1, 1, 1)."""
    for t in items:
        if t.data.size != 1:
            raise ShapeError(f"stack_scalars expects 1-element tensors, got {t.shape}")
    out = np.array([t.data.reshape(-1)[0] for t in items], dtype=DTYPE).reshape(-1, 1, 1, 1)

    def backward(g):
        flat = g.reshape(-1)
        for i, t in enumerate(items):
            _accumulate(t, np.full(t.shape, flat[i]))

    return _make(out, items, backward)


def select(x: Tensor, index: int) -> Tensor:
    """Pick one batch item, keeping the batch axis (size 1)."""
    _check_4d(x, "select")
    out = x.data[index : index + 1].copy()

    def backward(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index : index + 1] = g
            _accumulate(x, full)

    return _make(out, (x,), backward)


# ---------------------------------------------------------------- convolution


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patches of the padded input as a (ci*kh*kw, n*ho*wo) matrix."""
    n, ci = xp.shape[:2]
    cols = np.empty((ci, kh, kw, n, ho, wo), dtype=DTYPE)
    xt = xp.transpose(1, 0, 2, 3)
    for i in range(kh):
        for j in range(kw):
            cols[:, i, j] = xt[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(ci * kh * kw, n * ho * wo)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` has shape (co, ci, k, k) with k in {1, 3}; ``bias`` has shape (co,).
    """
    _check_4d(x, "conv2d")
    if weight.data.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (co, ci, kh, kw), got {weight.shape}")
    n, ci, h, w = x.shape
    co, wci, kh, kw = weight.shape
    if wci != ci:
        raise ShapeError(f"conv2d: input {x.shape} has {ci} channels but weight {weight.shape} expects {wci}")
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d: kernel must be 1x1 or 3x3, got weight {weight.shape}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if bias is not None and bias.shape != (co,):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match weight {weight.shape}")
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: input {x.shape} too small for weight {weight.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = weight.data.reshape(co, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gm = g.transpose(1, 0, 2, 3).reshape(co, -1)
        if weight.requires_grad:
            _accumulate(weight, (gm @ cols.T).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            _accumulate(bias, gm.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ gm).reshape(ci, kh, kw, n, ho, wo)
            dxp = np.zeros((ci, n) + xp.shape[2:], dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[:, i, j]
            dx = dxp.transpose(1, 0, 2, 3)
            if padding:
                dx = dx[:, :, padding : padding + h, padding : padding + w]
            _accumulate(x, dx)

    return _make(out, parents, backward)


# ---------------------------------------------------------- batch normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization over (n, h, w).

    In train mode batch statistics are used and ``running_mean`` /
    ``running_var`` are updated in place by an exponential moving average
    (unbiased variance for the running estimate). In eval mode the running
    statistics are used.
    """
    _check_4d(x, "batch_norm")
    if eps <= 0:
        raise ValueError(f"batch_norm: eps must be positive, got {eps}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"batch_norm: gamma {gamma.shape} / beta {beta.shape} do not match input {x.shape}")
    g4 = gamma.data.reshape(1, c, 1, 1)
    b4 = beta.data.reshape(1, c, 1, 1)
    if train:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.data.mean(axis=(0, 2, 3))
        xc = x.data - mean.reshape(1, c, 1, 1)
        var = (xc * xc).mean(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        xc = x.data - running_mean.reshape(1, c, 1, 1)
        var = running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv.reshape(1, c, 1, 1)
    out = xhat * g4 + b4

    def backward(g):
        if gamma.requires_grad:
            _accumulate(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        if beta.requires_grad:
            _accumulate(beta, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gx = g * g4
            if train:
                mg = gx.mean(axis=(0, 2, 3), keepdims=True)
                mgx = (gx * xhat).mean(axis=(0, 2, 3), keepdims=True)
                dx = (gx - mg - xhat * mgx) * inv.reshape(1, c, 1, 1)
            else:
                dx = gx * inv.reshape(1, c, 1, 1)
            _accumulate(x, dx)

    return _make(out, (x, gamma, beta), backward)


# ------------------------------------------------------------------ resampling


def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Linear-interpolation matrix (n_out, n_in) using half-pixel centers.

    Source coordinate of output index i is (i + 0.5) * n_in / n_out - 0.5,
    clamped at 0; neighbors beyond the last index replicate the edge.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resize sizes must be >= 1, got {n_in} -> {n_out}")
    m = np.zeros((n_out, n_in), dtype=DTYPE)
    ratio = n_in / n_out
    for i in range(n_out):
        src = max((i + 0.5) * ratio - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    _check_4d(x, "bilinear_resize")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"bilinear_resize: output size must be >= 1, got {out_h}x{out_w}")
    h, w = x.shape[2:]
    if (h, w) == (out_h, out_w):

        def backward_id(g):
            _accumulate(x, g)

        return _make(x.data.copy(), (x,), backward_id)
    rh = resize_matrix(h, out_h)
    rw = resize_matrix(w, out_w)
    out = np.ascontiguousarray(rh @ x.data @ rw.T)

    def backward(g):
        _accumulate(x, rh.T @ g @ rw)

    return _make(out, (x,), backward)


def resize_array(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a plain (..., h, w) array with the same sampling."""
    h, w = a.shape[-2:]
    if (h, w) == (out_h, out_w):
        return np.array(a, dtype=DTYPE, copy=True)
    return resize_matrix(h, out_h) @ np.asarray(a, dtype=DTYPE) @ resize_matrix(w, out_w).T


# ---------------------------------------------------------------- window mean


def _box_sum(a: np.ndarray, r: int) -> np.ndarray:
    """Sum over the (2r+1)^2 window clipped to the image, on the last two axes."""
    h, w = a.shape[-2:]
    pad = [(0, 0)] * (a.ndim - 2) + [(r + 1, r), (r + 1, r)]
    c = np.pad(a, pad).cumsum(axis=-2).cumsum(axis=-1)
    return (
        c[..., 2 * r + 1 : 2 * r + 1 + h, 2 * r + 1 : 2 * r + 1 + w]
        - c[..., 0:h, 2 * r + 1 : 2 * r + 1 + w]
        - c[..., 2 * r + 1 : 2 * r + 1 + h, 0:w]
        + c[..., 0:h, 0:w]
    )


def window_count(h: int, w: int, k: int) -> np.ndarray:
    """Number of in-image pixels in each clipped k x k window."""
    r = k // 2
    rows = np.minimum(np.arange(h) + r, h - 1) - np.maximum(np.arange(h) - r, 0) + 1
    cols = np.minimum(np.arange(w) + r, w - 1) - np.maximum(np.arange(w) - r, 0) + 1
    return np.outer(rows, cols).astype(DTYPE)


def window_mean(x: Tensor, k: int) -> Tensor:
    """Mean over the k x k window around each pixel, clipped at the borders."""
    _check_4d(x, "window_mean")
    if k < 3 or k % 2 == 0:
        raise ValueError(f"window_mean: k must be odd and >= 3, got {k}")
    r = k // 2
    h, w = x.shape[2:]
    cnt = window_count(h, w, k)
    out = _box_sum(x.data, r) / cnt

    def backward(g):
        # the clipped window relation is symmetric, so the adjoint is another box sum
        _accumulate(x, _box_sum(g / cnt, r))

    return _make(out, (x,), backward)


# -------------------------------------------------------------------- backward


def tape(loss: Tensor) -> list[Tensor]:
    """Differentiable nodes reachable from ``loss`` in reverse execution order."""
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in seen or not t.requires_grad:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack.extend(t._parents)
    nodes.sort(key=lambda t: t._seq, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable tensor.

    Gradients add onto whatever is already stored, so two calls without
    zeroing in between double the leaf gradients. Intermediate gradients are
    released after use.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("backward: loss does not depend on any tensor requiring grad")
    nodes = tape(loss)
    for t in nodes:
        if t._backward is not None:
            t.grad = None
    _accumulate(loss, np.ones_like(loss.data))
    for t in nodes:
        if t._backward is None:
            continue
        g, t.grad = t.grad, None
        if g is not None:
            t._backward(g)
