"""Cross feature module: fuse a fine and a coarse feature map by crossing.

Both inputs pass an entry conv-bn-relu. The shared product
G_l(low) * G_h(high) is then added back to each branch through its own M
block, and a restore conv-bn-relu finishes each branch:

    low_out  = R_l(E_l + M_l(G_l(E_l) * G_h(E_h)))
    high_out = R_h(E_h + M_h(G_l(E_l) * G_h(E_h)))

The coarse input is upsampled to the fine grid first, so both outputs live
at the fine resolution. With ``crossing=False`` the product path is replaced
by plain addition of the entry features (the additive-fusion baseline).
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .params import ParamStore, cbr, init_cbr
from .tensor import ShapeError, Tensor

CROSS_BLOCKS = ("g_l", "g_h", "m_l", "m_h")


def init_cfm(store: ParamStore, prefix: str, channels: int, rng: np.random.Generator, crossing: bool = True) -> None:
    blocks = ["entry_l", "entry_h"] + (list(CROSS_BLOCKS) if crossing else []) + ["restore_l", "restore_h"]
    for b in blocks:
        init_cbr(store, f"{prefix}.{b}", channels, channels, 3, rng)


def cross_product(e_l: Tensor, e_h: Tensor, store: ParamStore, prefix: str, train: bool) -> Tensor:
    return T.mul(cbr(e_l, store, f"{prefix}.g_l", train), cbr(e_h, store, f"{prefix}.g_h", train))


def cfm(
    f_l: Tensor,
    f_h: Tensor,
    store: ParamStore,
    prefix: str,
    train: bool = True,
    crossing: bool = True,
) -> tuple[Tensor, Tensor]:
    if f_l.data.ndim != 4 or f_h.data.ndim != 4:
        raise ShapeError(f"cfm expects 4-D inputs, got {f_l.shape} and {f_h.shape}")
    if f_l.shape[:2] != f_h.shape[:2]:
        raise ShapeError(f"cfm: batch/channel mismatch between low {f_l.shape} and high {f_h.shape}")
    hl, wl = f_l.shape[2:]
    hh, wh = f_h.shape[2:]
    if hh > hl or wh > wl:
        raise ShapeError(f"cfm: high-level input {f_h.shape} is larger than low-level input {f_l.shape}")
    if (hh, wh) != (hl, wl):
        f_h = T.bilinear_resize(f_h, hl, wl)

    e_l = cbr(f_l, store, f"{prefix}.entry_l", train)
    e_h = cbr(f_h, store, f"{prefix}.entry_h", train)
    if crossing:
        prod = cross_product(e_l, e_h, store, prefix, train)
        low = T.add(e_l, cbr(prod, store, f"{prefix}.m_l", train))
        high = T.add(e_h, cbr(prod, store, f"{prefix}.m_h", train))
    else:
        low = high = T.add(e_l, e_h)
    return cbr(low, store, f"{prefix}.restore_l", train), cbr(high, store, f"{prefix}.restore_h", train)
