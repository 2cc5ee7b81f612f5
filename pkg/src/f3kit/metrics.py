"""Saliency evaluation: MAE, PR / F-measure curves, mean F, S-measure, E-measure.

Predictions are float maps in [0, 1]; ground truth is binary. Curves use the
prediction quantized to 8 bits (round half up) with foreground iff the
quantized value is >= t for t = 0..255.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA2 = 0.3
EPS = 1e-8
N_THRESHOLDS = 256
# values this close below a half step still round up, so float noise from
# different resize routes cannot move a pixel across a quantization level
HALF_STEP_TOL = 1e-9


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise ValueError(f"prediction shape {p.shape} does not match ground truth {g.shape}")
    if p.ndim != 2:
        raise ValueError(f"expected 2-D maps, got shape {p.shape}")
    return p, g > 0.5


def quantize(pred: np.ndarray) -> np.ndarray:
    """8-bit levels, round half up."""
    return np.floor(np.clip(pred, 0.0, 1.0) * 255.0 + 0.5 + HALF_STEP_TOL).astype(np.int64)


def f_score(precision, recall, beta2: float = BETA2):
    """F_beta with F := 0 wherever precision + recall is 0."""
    p = np.asarray(precision, dtype=np.float64)
    r = np.asarray(recall, dtype=np.float64)
    num = (1.0 + beta2) * p * r
    den = beta2 * p + r
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return f if f.ndim else float(f)


def _precision_recall(tp, n_pred, n_gt):
    tp = np.asarray(tp, dtype=np.float64)
    n_pred = np.asarray(n_pred, dtype=np.float64)
    precision = np.where(n_pred > 0, tp / np.maximum(n_pred, 1), 1.0)
    recall = np.where(n_gt > 0, tp / max(n_gt, 1), 1.0)
    return precision, recall


def mae(pred, gt) -> float:
    p, g = _pair(pred, gt)
    return float(np.mean(np.abs(p - g)))


def pr_curve(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    """Precision and recall at thresholds 0..255 (arrays of length 256)."""
    p, g = _pair(pred, gt)
    q = quantize(p)
    # histogram counts by quantized level, accumulated from the top down
    fg_hist = np.bincount(q[g], minlength=N_THRESHOLDS)
    all_hist = np.bincount(q.ravel(), minlength=N_THRESHOLDS)
    tp = np.cumsum(fg_hist[::-1])[::-1]
    n_pred = np.cumsum(all_hist[::-1])[::-1]
    return _precision_recall(tp, n_pred, int(g.sum()))


def f_curve(pred, gt) -> np.ndarray:
    precision, recall = pr_curve(pred, gt)
    return f_score(precision, recall)


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(np.mean(pred)), 1.0)


def binarize_adaptive(pred: np.ndarray) -> np.ndarray:
    """pred >= min(2 * mean, 1); an all-zero map has no foreground."""
    return (pred >= adaptive_threshold(pred)) & (pred > 0)


def mean_f(pred, gt) -> float:
    p, g = _pair(pred, gt)
    b = binarize_adaptive(p)
    precision, recall = _precision_recall(np.sum(b & g), np.sum(b), int(g.sum()))
    return float(f_score(precision, recall))


def _object_score(x: np.ndarray) -> float:
    if x.size == 0:
        return 0.0
    m = float(x.mean())
    return 2.0 * m / (m * m + 1.0 + 2.0 * float(x.std()) + EPS)


def _s_object(p: np.ndarray, g: np.ndarray) -> float:
    mu = float(g.mean())
    o_fg = _object_score(p[g])
    o_bg = _object_score(1.0 - p[~g])
    return mu * o_fg + (1.0 - mu) * o_bg


def _centroid(g: np.ndarray) -> tuple[int, int]:
    """1-based rounded centroid (x, y); the image center when g is empty."""
    h, w = g.shape
    total = g.sum()
    if total == 0:
        return int(np.floor(w / 2 + 0.5)), int(np.floor(h / 2 + 0.5))
    x = np.sum(g.sum(axis=0) * np.arange(1, w + 1)) / total
    y = np.sum(g.sum(axis=1) * np.arange(1, h + 1)) / total
    return int(np.floor(x + 0.5)), int(np.floor(y + 0.5))


def _ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    g = g.astype(np.float64)
    x, y = p.mean(), g.mean()
    denom = n - 1 + EPS
    sx2 = np.sum((p - x) ** 2) / denom
    sy2 = np.sum((g - y) ** 2) / denom
    sxy = np.sum((p - x) * (g - y)) / denom
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx2 + sy2)
    if a != 0:
        return float(a / (b + EPS))
    return 1.0 if b == 0 else 0.0


def _s_region(p: np.ndarray, g: np.ndarray) -> float:
    h, w = g.shape
    x, y = _centroid(g)
    area = float(h * w)
    blocks = [
        (slice(0, y), slice(0, x), x * y),
        (slice(0, y), slice(x, w), (w - x) * y),
        (slice(y, h), slice(0, x), x * (h - y)),
        (slice(y, h), slice(x, w), (w - x) * (h - y)),
    ]
    return float(sum(a / area * _ssim(p[r, c], g[r, c]) for r, c, a in blocks))


def s_measure(pred, gt, alpha: float = 0.5) -> float:
    p, g = _pair(pred, gt)
    mu = g.mean()
    if mu == 0:
        score = 1.0 - p.mean()
    elif mu == 1:
        score = p.mean()
    else:
        score = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(np.clip(score, 0.0, 1.0))


def e_measure(pred, gt) -> float:
    p, g = _pair(pred, gt)
    fm = binarize_adaptive(p).astype(np.float64)
    gf = g.astype(np.float64)
    mu = gf.mean()
    if mu == 0:
        enhanced = 1.0 - fm
    elif mu == 1:
        enhanced = fm
    else:
        phi_f = fm - fm.mean()
        phi_g = gf - mu
        align = 2.0 * phi_g * phi_f / (phi_g * phi_g + phi_f * phi_f + EPS)
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(np.clip(enhanced.mean(), 0.0, 1.0))


@dataclass
class ImageScores:
    name: str
    mae: float
    mean_f: float
    s_measure: float
    e_measure: float
    precision: np.ndarray = field(repr=False)
    recall: np.ndarray = field(repr=False)

    @property
    def f_curve(self) -> np.ndarray:
        return f_score(self.precision, self.recall)


def score_image(pred, gt, name: str = "") -> ImageScores:
    precision, recall = pr_curve(pred, gt)
    return ImageScores(
        name=name,
        mae=mae(pred, gt),
        mean_f=mean_f(pred, gt),
        s_measure=s_measure(pred, gt),
        e_measure=e_measure(pred, gt),
        precision=precision,
        recall=recall,
    )


@dataclass
class MetricReport:
    images: list[ImageScores]
    precision: np.ndarray
    recall: np.ndarray
    f_curve: np.ndarray

    @property
    def count(self) -> int:
        return len(self.images)

    def mean(self, key: str) -> float:
        return float(np.mean([getattr(s, key) for s in self.images]))

    def summary(self) -> dict[str, float]:
        return {k: self.mean(k) for k in ("mae", "mean_f", "s_measure", "e_measure")}

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean": self.summary(),
            "max_f": float(self.f_curve.max()) if self.count else 0.0,
            "images": [
                {"name": s.name, "mae": s.mae, "mean_f": s.mean_f, "s_measure": s.s_measure, "e_measure": s.e_measure}
                for s in self.images
            ],
            "pr_curve": [[float(p), float(r)] for p, r in zip(self.precision, self.recall)],
            "f_curve": [float(f) for f in self.f_curve],
        }

    def curves_csv(self) -> str:
        lines = ["threshold,precision,recall,f"]
        for t in range(N_THRESHOLDS):
            lines.append(f"{t},{float(self.precision[t])!r},{float(self.recall[t])!r},{float(self.f_curve[t])!r}")
        return "\n".join(lines) + "\n"


def aggregate(scores: list[ImageScores]) -> MetricReport:
    """Average per-threshold precision/recall and per-image F curves over images."""
    if not scores:
        raise ValueError("no images to aggregate")
    precision = np.mean([s.precision for s in scores], axis=0)
    recall = np.mean([s.recall for s in scores], axis=0)
    fc = np.mean([s.f_curve for s in scores], axis=0)
    return MetricReport(list(scores), precision, recall, fc)


def evaluate_dataset(pred_dir, gt_dir) -> MetricReport:
    """Score every prediction against the same-stem mask, in filename order.

    Predictions whose size differs from the mask are bilinearly resized to it.
    Masks are foreground where the 8-bit value is >= 128.
    """
    from .data import match_by_stem, read_gray
    from .tensor import resize_array

    scores = []
    for stem, pred_path, gt_path in match_by_stem(pred_dir, gt_dir):
        pred = read_gray(pred_path).astype(np.float64) / 255.0
        gt = (read_gray(gt_path) >= 128).astype(np.float64)
        if pred.shape != gt.shape:
            pred = np.clip(resize_array(pred, *gt.shape), 0.0, 1.0)
        scores.append(score_image(pred, gt, stem))
    return aggregate(scores)
