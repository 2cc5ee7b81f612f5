"""Pixel-position-aware losses.

Every pixel gets a weight 1 + gamma * alpha, where alpha is the absolute
difference between the ground truth and its local window average. Pixels on
boundaries, thin parts and holes therefore count more in both the weighted
BCE and the weighted IoU terms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .cfd import CfdOutput
from .tensor import ShapeError, Tensor

DEFAULT_GAMMA = 5.0
LOSS_MODES = ("ppa", "bce", "iou", "bce+iou")
# weight of the auxiliary map attached to level j (j = 2..5) is 1 / 2**(j-1)
AUX_WEIGHTS = tuple(1.0 / 2 ** (j - 1) for j in range(2, 6))


def default_window(size: int) -> int:
    """Window edge scaled from 31 px at 352 px, rounded to the nearest odd >= 3."""
    v = 31.0 * size / 352.0
    return max(3, 2 * int(np.floor((v - 1) / 2 + 0.5)) + 1)


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=T.DTYPE)


def check_binary(gt: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    gt = np.asarray(gt, dtype=T.DTYPE)
    bad = np.minimum(np.abs(gt), np.abs(gt - 1.0)) > tol
    if bad.any():
        raise ValueError(f"ground truth must be binary (0/1); {int(bad.sum())} pixel(s) are not")
    return np.round(gt)


def alpha_map(gt, k: int) -> np.ndarray:
    """|window_mean(gt, k) - gt| with windows clipped to the image.

    Accepts an (n, 1, h, w) array/Tensor or a plain (h, w) mask and returns
    the same shape. The result is a constant weight, never differentiated.
    """
    g = check_binary(_as_array(gt))
    squeeze = g.ndim == 2
    g4 = g[None, None] if squeeze else g
    if g4.ndim != 4:
        raise ShapeError(f"alpha_map expects (h, w) or (n, 1, h, w), got {g.shape}")
    mean = T.window_mean(Tensor(g4), k).data
    alpha = np.clip(np.abs(mean - g4), 0.0, 1.0)
    return alpha[0, 0] if squeeze else alpha


def _weights(alpha: np.ndarray, gamma: float) -> np.ndarray:
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    return 1.0 + gamma * alpha


def _check(logits: Tensor, gt: np.ndarray, alpha: np.ndarray) -> None:
    if logits.data.ndim != 4 or logits.shape[1] != 1:
        raise ShapeError(f"logits must be (n, 1, h, w), got {logits.shape}")
    if gt.shape != logits.shape or alpha.shape != logits.shape:
        raise ShapeError(f"shape mismatch: logits {logits.shape}, gt {gt.shape}, alpha {alpha.shape}")


def wbce(logits: Tensor, gt, alpha, gamma: float = DEFAULT_GAMMA, denominator: str = "weights") -> Tensor:
    """Weighted BCE on sigmoid(logits), averaged over the batch.

    ``denominator="weights"`` normalizes each image by sum(1 + gamma*alpha),
    which reduces to the plain mean BCE when gamma is 0.
    ``denominator="gamma_alpha"`` divides by sum(gamma*alpha) instead; that
    sum is zero for constant masks and raises.
    """
    g = _as_array(gt)
    a = _as_array(alpha)
    _check(logits, g, a)
    w = _weights(a, gamma)
    # -[g log s + (1-g) log(1-s)] == softplus(x) - g*x
    per_pixel = T.sub(T.softplus(logits), T.const_mul(logits, g))
    num = T.reduce_sum(T.const_mul(per_pixel, w), axes=(1, 2, 3))
    if denominator == "weights":
        den = w.sum(axis=(1, 2, 3), keepdims=True)
    elif denominator == "gamma_alpha":
        den = (gamma * a).sum(axis=(1, 2, 3), keepdims=True)
        if (den == 0).any():
            raise ValueError("sum(gamma * alpha) is zero; use denominator='weights'")
    else:
        raise ValueError(f"unknown denominator {denominator!r}")
    return T.reduce_mean(T.const_mul(num, 1.0 / den))


def wiou(logits: Tensor, gt, alpha, gamma: float = DEFAULT_GAMMA) -> Tensor:
    """1 - weighted intersection / weighted union, averaged over the batch."""
    g = _as_array(gt)
    a = _as_array(alpha)
    _check(logits, g, a)
    w = _weights(a, gamma)
    p = T.sigmoid(logits)
    inter = T.reduce_sum(T.const_mul(p, g * w), axes=(1, 2, 3))
    # union = sum((g + p - g*p) * w) = sum(g*w) + sum(p*(1-g)*w)
    union = T.add(
        Tensor((g * w).sum(axis=(1, 2, 3), keepdims=True)),
        T.reduce_sum(T.const_mul(p, (1.0 - g) * w), axes=(1, 2, 3)),
    )
    return T.reduce_mean(T.rsub_scalar(1.0, T.div(inter, union)))


@dataclass
class LossBreakdown:
    wbce: Tensor | None
    wiou: Tensor | None
    total: Tensor

    @property
    def ppa(self) -> Tensor:
        return self.total


def map_loss(logits: Tensor, gt, alpha, gamma: float = DEFAULT_GAMMA, mode: str = "ppa") -> LossBreakdown:
    """Loss of one supervised map under an ablation ``mode``.

    ``ppa`` uses both weighted terms; ``bce``, ``iou`` and ``bce+iou`` are the
    unweighted (gamma = 0) variants.
    """
    if mode not in LOSS_MODES:
        raise ValueError(f"unknown loss mode {mode!r}; expected one of {LOSS_MODES}")
    if mode != "ppa":
        gamma = 0.0
    b = wbce(logits, gt, alpha, gamma) if mode in ("ppa", "bce", "bce+iou") else None
    i = wiou(logits, gt, alpha, gamma) if mode in ("ppa", "iou", "bce+iou") else None
    total = b if i is None else i if b is None else T.add(b, i)
    return LossBreakdown(b, i, total)


def ppa_loss(logits: Tensor, gt, gamma: float = DEFAULT_GAMMA, k: int = 9) -> LossBreakdown:
    alpha = alpha_map(gt, k)
    return map_loss(logits, gt, alpha, gamma, "ppa")


def total_loss(
    output: CfdOutput,
    gt,
    gamma: float = DEFAULT_GAMMA,
    k: int = 9,
    mode: str = "ppa",
    mls: bool = True,
) -> tuple[Tensor, dict[str, float]]:
    """Mean loss over the decoder maps plus the down-weighted auxiliary losses."""
    if not output.maps:
        raise ValueError("no decoder maps to supervise")
    if mls and len(output.aux) != 4:
        raise ValueError(f"expected 4 auxiliary maps, got {len(output.aux)}")
    g = _as_array(gt)
    alpha = alpha_map(g, k)
    parts: dict[str, float] = {}
    dec = []
    for i, m in enumerate(output.maps, start=1):
        dec.append(map_loss(m, g, alpha, gamma, mode).total)
        parts[f"map{i}"] = dec[-1].item()
    aux = []
    if mls:
        for j, a in enumerate(output.aux, start=2):
            aux.append(map_loss(a, g, alpha, gamma, mode).total)
            parts[f"aux{j}"] = aux[-1].item()
    loss = combine(dec, aux)
    parts["total"] = loss.item()
    return loss, parts


def combine(decoder_losses: list[Tensor], aux_losses: list[Tensor]) -> Tensor:
    """(1/N) * sum(decoder) + sum_j aux_j / 2**(j-1) from precomputed terms."""
    if not decoder_losses:
        raise ValueError("no decoder losses")
    if len(aux_losses) not in (0, 4):
        raise ValueError(f"expected 0 or 4 auxiliary losses, got {len(aux_losses)}")
    loss = T.scale(_sum(decoder_losses), 1.0 / len(decoder_losses))
    for wj, a in zip(AUX_WEIGHTS, aux_losses):
        loss = T.add(loss, T.scale(a, wj))
    return loss


def _sum(terms: list[Tensor]) -> Tensor:
    acc = terms[0]
    for t in terms[1:]:
        acc = T.add(acc, t)
    return acc
