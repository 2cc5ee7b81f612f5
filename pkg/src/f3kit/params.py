"""Named parameter storage and the conv / conv-bn-relu building blocks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import Tensor

BN_MOMENTUM = 0.1
BN_EPS = 1e-5


@dataclass
class ParamStore:
    """Trainable tensors plus non-trainable buffers (batch-norm running stats).

    Names are dotted paths; insertion order is the canonical order used for
    checkpoints and optimizer state.
    """

    params: dict[str, Tensor] = field(default_factory=dict)
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(value, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> None:
        self.buffers[name] = np.array(value, dtype=T.DTYPE)

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())


def init_conv(store: ParamStore, name: str, ci: int, co: int, k: int, rng: np.random.Generator, bias: bool = True) -> None:
    fan_in = ci * k * k
    std = np.sqrt(2.0 / fan_in)
    store.add(f"{name}.w", rng.standard_normal((co, ci, k, k)) * std)
    if bias:
        store.add(f"{name}.b", np.zeros(co))


def init_bn(store: ParamStore, name: str, c: int) -> None:
    store.add(f"{name}.gamma", np.ones(c))
    store.add(f"{name}.beta", np.zeros(c))
    store.add_buffer(f"{name}.rmean", np.zeros(c))
    store.add_buffer(f"{name}.rvar", np.ones(c))


def init_cbr(store: ParamStore, name: str, ci: int, co: int, k: int, rng: np.random.Generator) -> None:
    """A conv (bias-free, batch norm supplies the shift) + batch norm pair."""
    init_conv(store, f"{name}.conv", ci, co, k, rng, bias=False)
    init_bn(store, f"{name}.bn", co)


def conv(x: Tensor, store: ParamStore, name: str, stride: int = 1) -> Tensor:
    w = store[f"{name}.w"]
    b = store.params.get(f"{name}.b")
    return T.conv2d(x, w, b, stride=stride, padding=w.shape[2] // 2)


def bn(x: Tensor, store: ParamStore, name: str, train: bool) -> Tensor:
    return T.batch_norm(
        x,
        store[f"{name}.gamma"],
        store[f"{name}.beta"],
        store.buffers[f"{name}.rmean"],
        store.buffers[f"{name}.rvar"],
        train=train,
        momentum=BN_MOMENTUM,
        eps=BN_EPS,
    )


def cbr(x: Tensor, store: ParamStore, name: str, train: bool, stride: int = 1) -> Tensor:
    return T.relu(bn(conv(x, store, f"{name}.conv", stride), store, f"{name}.bn", train))
