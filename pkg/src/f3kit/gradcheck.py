"""Central finite-difference check of tape gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor


def numeric_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6, indices=None) -> np.ndarray:
    """(f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for each (or selected) flat index i.

    ``x.data`` is perturbed in place and restored, so ``f`` may close over
    ``x`` itself (e.g. when ``x`` is a model parameter).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = np.zeros(flat.size)
    with T.no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            fp = _scalar(f(x))
            flat[i] = orig - eps
            fm = _scalar(f(x))
            flat[i] = orig
            out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


def _scalar(y: Tensor) -> float:
    if y.data.size != 1:
        raise ShapeError(f"grad_check needs a scalar-valued function, got shape {y.shape}")
    return float(y.data.reshape(-1)[0])


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


def analytic_grad(f: Callable[[Tensor], Tensor], x: Tensor) -> np.ndarray:
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    y = f(x)
    _scalar(y)
    T.backward(y)
    g = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    x.requires_grad = was
    return g


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6, indices=None) -> float:
    """Max relative error between the tape gradient and central differences.

    ``indices`` restricts the comparison to selected flat coordinates.
    """
    ga = analytic_grad(f, x).reshape(-1)
    gn = numeric_grad(f, x, eps, indices).reshape(-1)
    if indices is not None:
        sel = np.asarray(list(indices))
        ga, gn = ga[sel], gn[sel]
    return float(relative_error(ga, gn).max()) if ga.size else 0.0
