"""SGD with momentum and a warm-up / linear-decay schedule, two LR groups."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .params import ParamStore

GROUPS = ("encoder", "rest")


def group_of(name: str) -> str:
    return "encoder" if name.startswith("enc.") else "rest"


def decays(name: str) -> bool:
    """Weight decay applies to convolution kernels only."""
    return name.endswith(".w")


@dataclass(frozen=True)
class Schedule:
    max_lr: dict
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.total_steps < 1 or not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"need 0 <= warmup ({self.warmup_steps}) <= total ({self.total_steps}), total >= 1")


def lr_at(schedule: Schedule, step: int, group: str = "rest") -> float:
    """Linear ramp 0 -> max over the warm-up, then linear decay to 0 at total_steps."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    peak = float(schedule.max_lr[group])
    w, n = schedule.warmup_steps, schedule.total_steps
    if step < w:
        return peak * step / w
    if n == w:
        return peak if step < n else 0.0
    return peak * (n - step) / (n - w)


@dataclass
class OptimState:
    momentum: float = 0.9
    weight_decay: float = 0.0005
    velocity: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(store: ParamStore, state: OptimState, lr: dict | float) -> None:
    """v <- momentum*v + grad + wd*param ; param <- param - lr*v, in place.

    ``lr`` is either one float or a {group: lr} mapping. Parameters without a
    gradient are treated as having a zero gradient.
    """
    for name, p in store.params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p.data)
        elif v.shape != p.shape:
            raise ValueError(f"velocity shape {v.shape} does not match parameter {name} {p.shape}")
        v *= state.momentum
        v += g
        if state.weight_decay and decays(name):
            v += state.weight_decay * p.data
        step_lr = lr if isinstance(lr, (int, float)) else lr[group_of(name)]
        p.data -= step_lr * v
