"""Cascaded feedback decoder.

Each sub-decoder aggregates the pyramid bottom-up with three CFMs
((f4, f5) -> a45, (f3, a45) -> a345, (f2, a345) -> p). The high branches of
those CFMs, resampled to their native level sizes, are the refined features
handed to the next sub-decoder after the aggregate p has been downsampled
and added to every level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cfm import cfm, init_cfm
from .encoder import FeaturePyramid
from .params import ParamStore, conv, init_conv
from .tensor import Tensor

CFM_PAIRS = ("cfm45", "cfm34", "cfm23")


@dataclass
class CfdOutput:
    maps: list[Tensor]
    aux: list[Tensor]
    cfm_calls: int = 0
    head_calls: int = 0
    feedback_additions: int = 0
    refined: list[tuple[Tensor, ...]] = field(default_factory=list, repr=False)


def decoder_prefix(i: int, shared: bool) -> str:
    return "dec1" if shared else f"dec{i}"


def init_decoder(
    store: ParamStore,
    rng: np.random.Generator,
    n_decoders: int = 2,
    channels: int = 64,
    crossing: bool = True,
    shared: bool = False,
) -> None:
    for i in range(1, (1 if shared else n_decoders) + 1):
        for pair in CFM_PAIRS:
            init_cfm(store, f"dec{i}.{pair}", channels, rng, crossing=crossing)
    for i in range(1, n_decoders + 1):
        init_conv(store, f"head{i}", channels, 1, 3, rng)
    for j in range(2, 6):
        init_conv(store, f"aux{j}", channels, 1, 3, rng)


def sub_decoder(
    levels: tuple[Tensor, Tensor, Tensor, Tensor],
    store: ParamStore,
    prefix: str,
    train: bool = True,
    crossing: bool = True,
    counter: CfdOutput | None = None,
) -> tuple[tuple[Tensor, Tensor, Tensor, Tensor], Tensor]:
    """One bottom-up pass. Returns ((refined f2..f5), p) with p at f2 size."""
    f2, f3, f4, f5 = levels
    a45, h45 = cfm(f4, f5, store, f"{prefix}.cfm45", train, crossing)
    a345, h34 = cfm(f3, a45, store, f"{prefix}.cfm34", train, crossing)
    p, h23 = cfm(f2, a345, store, f"{prefix}.cfm23", train, crossing)
    if counter is not None:
        counter.cfm_calls += 3
    r5 = T.bilinear_resize(h45, *f5.shape[2:])
    r4 = T.bilinear_resize(h34, *f4.shape[2:])
    r3 = T.bilinear_resize(h23, *f3.shape[2:])
    return (p, r3, r4, r5), p


def _head(x: Tensor, store: ParamStore, name: str, size: tuple[int, int]) -> Tensor:
    return T.bilinear_resize(conv(x, store, name), *size)


def cfd_forward(
    pyramid: FeaturePyramid,
    store: ParamStore,
    n_decoders: int = 2,
    train: bool = True,
    crossing: bool = True,
    shared: bool = False,
) -> CfdOutput:
    if n_decoders < 1:
        raise ValueError(f"number of sub-decoders must be >= 1, got {n_decoders}")
    size = pyramid.image_size
    out = CfdOutput(maps=[], aux=[])

    feats, p = sub_decoder(pyramid.levels, store, decoder_prefix(1, shared), train, crossing, out)
    out.refined.append(feats)
    out.maps.append(_head(p, store, "head1", size))
    out.head_calls += 1
    out.aux = [_head(f, store, f"aux{j}", size) for j, f in zip(range(2, 6), feats)]

    for i in range(2, n_decoders + 1):
        fed = tuple(T.add(f, T.bilinear_resize(p, *f.shape[2:])) for f in feats)
        out.feedback_additions += len(fed)
        feats, p = sub_decoder(fed, store, decoder_prefix(i, shared), train, crossing, out)
        out.refined.append(feats)
        out.maps.append(_head(p, store, f"head{i}", size))
        out.head_calls += 1
    return out
