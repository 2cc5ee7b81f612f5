"""Encoder + cascaded decoder assembled into one trainable network."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .cfd import CfdOutput, cfd_forward, init_decoder
from .encoder import encode, init_encoder
from .params import ParamStore
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    widths: tuple[int, ...] = (16, 32, 64, 64)
    channels: int = 64
    n_decoders: int = 2
    crossing: bool = True
    shared_decoders: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["widths"] = tuple(d["widths"])
        return cls(**d)


@dataclass
class Model:
    config: ModelConfig
    store: ParamStore = field(default_factory=ParamStore)


def build_model(config: ModelConfig = ModelConfig(), seed: int = 0) -> Model:
    if len(config.widths) != 4:
        raise ValueError(f"encoder needs 4 stage widths, got {config.widths}")
    if config.n_decoders < 1:
        raise ValueError(f"n_decoders must be >= 1, got {config.n_decoders}")
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_encoder(store, rng, config.widths, config.channels)
    init_decoder(store, rng, config.n_decoders, config.channels, config.crossing, config.shared_decoders)
    return Model(config, store)


def forward(image: Tensor, model: Model, train: bool = True, n_decoders: int | None = None) -> CfdOutput:
    cfg = model.config
    n = cfg.n_decoders if n_decoders is None else n_decoders
    if n > cfg.n_decoders:
        raise ValueError(f"model has {cfg.n_decoders} sub-decoders, asked for {n}")
    pyramid = encode(image, model.store, train)
    return cfd_forward(pyramid, model.store, n, train, cfg.crossing, cfg.shared_decoders)


def infer(image: Tensor | np.ndarray, model: Model) -> np.ndarray:
    """Saliency probabilities (n, 1, H, W) from the last sub-decoder, eval mode."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    with T.no_grad():
        out = forward(x, model, train=False)
        return T.sigmoid(out.maps[-1]).data
