"""Small strided CNN that stands in for a pretrained backbone.

A stride-2 stem followed by four stages of [3x3 s2 conv-bn-relu, 3x3 s1
conv-bn-relu]; each stage output is projected to the decoder width by a 1x1
convolution. For an H x W input the levels come out at H/4, H/8, H/16, H/32.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .params import ParamStore, cbr, conv, init_cbr, init_conv
from .tensor import ShapeError, Tensor

DIVISOR = 32


@dataclass
class FeaturePyramid:
    f2: Tensor
    f3: Tensor
    f4: Tensor
    f5: Tensor
    image_size: tuple[int, int]

    @property
    def levels(self) -> tuple[Tensor, Tensor, Tensor, Tensor]:
        return (self.f2, self.f3, self.f4, self.f5)


def check_size(h: int, w: int) -> None:
    if h % DIVISOR or w % DIVISOR or h < DIVISOR or w < DIVISOR:
        raise ShapeError(f"image size {h}x{w} is not a positive multiple of {DIVISOR}")


def init_encoder(store: ParamStore, rng: np.random.Generator, widths=(16, 32, 64, 64), channels: int = 64) -> None:
    init_cbr(store, "enc.stem", 3, widths[0], 3, rng)
    cin = widths[0]
    for i, w in enumerate(widths):
        init_cbr(store, f"enc.s{i}.down", cin, w, 3, rng)
        init_cbr(store, f"enc.s{i}.body", w, w, 3, rng)
        init_conv(store, f"enc.proj{i}", w, channels, 1, rng)
        cin = w


def encode(image: Tensor, store: ParamStore, train: bool = True) -> FeaturePyramid:
    if image.data.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"encode expects an (n, 3, H, W) image, got {image.shape}")
    h, w = image.shape[2:]
    check_size(h, w)
    x = cbr(image, store, "enc.stem", train, stride=2)
    levels = []
    for i in range(4):
        x = cbr(x, store, f"enc.s{i}.down", train, stride=2)
        x = cbr(x, store, f"enc.s{i}.body", train)
        levels.append(conv(x, store, f"enc.proj{i}"))
    return FeaturePyramid(*levels, image_size=(h, w))
