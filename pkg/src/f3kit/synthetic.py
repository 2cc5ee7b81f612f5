"""Seeded synthetic salient-object dataset.

Each image holds 1-3 saturated foreground shapes (ellipses, rounded
rectangles, spiky stars with thin protrusions) drawn with 4x supersampled
anti-aliasing over a muted low-frequency background with faint stripes and
blobs. Masks are exact: a pixel is foreground when at least half of its
sub-samples are covered.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import write_gray, write_manifest, write_rgb
from .tensor import resize_array

SUPERSAMPLE = 4
FG_RANGE = (0.05, 0.6)
KINDS = ("ellipse", "rounded_rect", "star")


@dataclass
class Rendered:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    mask: np.ndarray  # (H, W) uint8 in {0, 1}
    kinds: list[str] = field(default_factory=list)
    spikes: np.ndarray | None = None  # (H, W) bool, pixels covered by star protrusions


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    n = size * SUPERSAMPLE
    c = (np.arange(n) + 0.5) / SUPERSAMPLE
    return np.meshgrid(c, c)  # x, y in pixel units


def _rotate(x, y, cx, cy, theta):
    dx, dy = x - cx, y - cy
    c, s = np.cos(theta), np.sin(theta)
    return c * dx + s * dy, -s * dx + c * dy


def _ellipse(x, y, rng, size):
    cx, cy = rng.uniform(0.25, 0.75, 2) * size
    a, b = rng.uniform(0.10, 0.28, 2) * size
    u, v = _rotate(x, y, cx, cy, rng.uniform(0, np.pi))
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0, None


def _rounded_rect(x, y, rng, size):
    cx, cy = rng.uniform(0.25, 0.75, 2) * size
    hx, hy = rng.uniform(0.08, 0.25, 2) * size
    r = rng.uniform(0.1, 0.5) * min(hx, hy)
    u, v = _rotate(x, y, cx, cy, rng.uniform(0, np.pi))
    qx, qy = np.abs(u) - (hx - r), np.abs(v) - (hy - r)
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    inside = np.minimum(np.maximum(qx, qy), 0)
    return outside + inside - r <= 0, None


def _star(x, y, rng, size):
    cx, cy = rng.uniform(0.3, 0.7, 2) * size
    body = rng.uniform(0.07, 0.14) * size
    n_spikes = int(rng.integers(3, 7))
    phase = rng.uniform(0, 2 * np.pi)
    core = np.hypot(x - cx, y - cy) <= body
    spikes = np.zeros_like(core)
    for i in range(n_spikes):
        theta = phase + 2 * np.pi * i / n_spikes + rng.uniform(-0.2, 0.2)
        length = body + rng.uniform(0.12, 0.3) * size
        half_w = rng.uniform(0.8, 1.6)
        u, v = _rotate(x, y, cx, cy, theta)
        spikes |= (u >= 0) & (u <= length) & (np.abs(v) <= half_w)
    return core | spikes, spikes & ~core


_SHAPES = {"ellipse": _ellipse, "rounded_rect": _rounded_rect, "star": _star}


def _downsample(a: np.ndarray, size: int) -> np.ndarray:
    return a.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))


def _hsv_to_rgb(h, s, v) -> np.ndarray:
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def _background(rng, size) -> np.ndarray:
    cells = int(rng.integers(3, 6))
    base = rng.uniform(0.3, 0.7)
    coarse = base + rng.uniform(-0.15, 0.15, (3, cells, cells))
    bg = np.stack([resize_array(c, size, size) for c in coarse], axis=-1)
    yy, xx = np.mgrid[0:size, 0:size]
    theta = rng.uniform(0, np.pi)
    period = rng.uniform(4, 12)
    stripes = 0.04 * np.sin(2 * np.pi * (np.cos(theta) * xx + np.sin(theta) * yy) / period)
    bg += stripes[..., None]
    for _ in range(int(rng.integers(2, 6))):
        cx, cy = rng.uniform(0, size, 2)
        r = rng.uniform(2, 6)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * r * r))
        bg += 0.08 * blob[..., None] * rng.uniform(-1, 1, 3)
    return bg


def render(rng: np.random.Generator, size: int, kinds: list[str] | None = None, max_tries: int = 100) -> Rendered:
    """Render one image/mask pair; shapes are redrawn until the foreground fraction is in range."""
    x, y = _grid(size)
    for _ in range(max_tries):
        chosen = list(kinds) if kinds else [KINDS[int(rng.integers(len(KINDS)))] for _ in range(int(rng.integers(1, 4)))]
        cover = np.zeros((size, size))
        layers = []
        spike_cover = np.zeros((size, size))
        for kind in chosen:
            inside, spikes = _SHAPES[kind](x, y, rng, size)
            cov = _downsample(inside.astype(np.float64), size)
            layers.append(cov)
            cover = np.maximum(cover, cov)
            if spikes is not None:
                spike_cover = np.maximum(spike_cover, _downsample(spikes.astype(np.float64), size))
        mask = cover >= 0.5
        if FG_RANGE[0] <= mask.mean() <= FG_RANGE[1]:
            break
    else:
        raise RuntimeError(f"could not place shapes with foreground fraction in {FG_RANGE}")

    img = _background(rng, size)
    yy, xx = np.mgrid[0:size, 0:size] / size
    for cov in layers:
        color = _hsv_to_rgb(rng.uniform(0, 1), rng.uniform(0.6, 1.0), rng.uniform(0.55, 1.0))
        shade = 1.0 + 0.15 * ((xx - 0.5) * rng.uniform(-1, 1) + (yy - 0.5) * rng.uniform(-1, 1))
        obj = color[None, None, :] * shade[..., None]
        img = img * (1 - cov[..., None]) + obj * cov[..., None]
    img += rng.normal(0.0, 0.02, img.shape)
    return Rendered(np.clip(img, 0.0, 1.0), mask.astype(np.uint8), chosen, (spike_cover >= 0.5) & mask)


def gen_synthetic(out, count: int, size: int = 96, seed: int = 0) -> list[str]:
    """Write ``count`` pairs under ``out`` (images/, masks/, manifest.txt). Returns the ids."""
    if size % 32 or size <= 0:
        raise ValueError(f"size {size} is not a positive multiple of 32")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    out = Path(out)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e
    ids, pairs = [], []
    for i in range(count):
        rng = np.random.default_rng([seed, i])
        r = render(rng, size)
        sid = f"{i:05d}"
        write_rgb(out / "images" / f"{sid}.png", r.image)
        write_gray(out / "masks" / f"{sid}.png", r.mask * 255)
        ids.append(sid)
        pairs.append((f"images/{sid}.png", f"masks/{sid}.png"))
    write_manifest(out, pairs)
    return ids
