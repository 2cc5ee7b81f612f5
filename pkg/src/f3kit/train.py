"""End-to-end training loop with the ablation switches."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from . import checkpoint
from . import tensor as T
from .data import Sample, hflip, multiscale, random_crop, resize
from .losses import LOSS_MODES, total_loss
from .metrics import mae, mean_f
from .model import Model, ModelConfig, build_model, forward, infer
from .optim import OptimState, Schedule, lr_at, sgd_step

log = logging.getLogger(__name__)

LOG_HEADER = "epoch,step,loss,val_mae,val_mf,lr"
SCALES = (0.75, 1.0, 1.25)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step


@dataclass
class TrainConfig:
    gamma: float = 5.0
    k: int = 9
    n_decoders: int = 2
    batch_size: int = 8
    epochs: int = 20
    seed: int = 0
    loss_mode: str = "ppa"
    mls: bool = True
    cfm: bool = True
    cfd: bool = True
    size: int = 96
    lr_encoder: float = 0.005
    lr_rest: float = 0.05
    reference_batch: int = 32
    warmup_frac: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0005
    flip: bool = True
    crop_min: float = 0.75
    multiscale: bool = True

    def __post_init__(self):
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.size % 32 or self.size <= 0:
            raise ValueError(f"size {self.size} is not a positive multiple of 32")
        if self.k < 3 or self.k % 2 == 0:
            raise ValueError(f"k must be odd and >= 3, got {self.k}")
        if self.n_decoders < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("n_decoders, batch_size and epochs must be >= 1")
        if not 0.5 < self.crop_min <= 1.0:
            raise ValueError(f"crop_min must be in (0.5, 1], got {self.crop_min}")

    @property
    def decoders(self) -> int:
        return self.n_decoders if self.cfd else 1

    def model_config(self) -> ModelConfig:
        return ModelConfig(n_decoders=self.decoders, crossing=self.cfm)

    def max_lr(self) -> dict:
        f = self.batch_size / self.reference_batch
        return {"encoder": self.lr_encoder * f, "rest": self.lr_rest * f}

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}


@dataclass
class TrainResult:
    model: Model
    log_rows: list[dict]

    def log_csv(self) -> str:
        return format_log(self.log_rows)


def format_log(rows: list[dict]) -> str:
    def fmt(v):
        return "" if v is None else repr(float(v)) if isinstance(v, float) else str(v)

    lines = [LOG_HEADER]
    for r in rows:
        lines.append(",".join(fmt(r[k]) for k in LOG_HEADER.split(",")))
    return "\n".join(lines) + "\n"


def augment(batch: list[Sample], cfg: TrainConfig, rng: np.random.Generator) -> list[Sample]:
    out = []
    for s in batch:
        if s.size != (cfg.size, cfg.size):
            s = resize(s, cfg.size, cfg.size)
        if cfg.flip and rng.random() < 0.5:
            s = hflip(s)
        if cfg.crop_min < 1.0:
            s = random_crop(s, rng.uniform(cfg.crop_min, 1.0), rng)
        out.append(s)
    if cfg.multiscale:
        scale = SCALES[int(rng.integers(len(SCALES)))]
        out = [multiscale(s, scale) for s in out]
    return out


def predict(model: Model, images: np.ndarray, batch: int = 16) -> np.ndarray:
    """Saliency maps (n, H, W) for an (n, 3, H, W) stack, in eval mode."""
    maps = [infer(images[i : i + batch], model)[:, 0] for i in range(0, len(images), batch)]
    return np.concatenate(maps, axis=0)


def evaluate_samples(model: Model, samples: list[Sample], size: int) -> tuple[float, float]:
    """Mean MAE and mean F over samples (resized to the training size)."""
    samples = [resize(s, size, size) if s.size != (size, size) else s for s in samples]
    images = np.concatenate([s.image for s in samples])
    preds = predict(model, images)
    maes = [mae(p, s.mask[0, 0]) for p, s in zip(preds, samples)]
    mfs = [mean_f(p, s.mask[0, 0]) for p, s in zip(preds, samples)]
    return float(np.mean(maes)), float(np.mean(mfs))


def train(
    cfg: TrainConfig,
    dataset: list[Sample],
    val: list[Sample] | None = None,
    on_step: Callable[[int, float], None] | None = None,
) -> TrainResult:
    if not dataset:
        raise ValueError("training dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    model = build_model(cfg.model_config(), seed=cfg.seed)
    steps_per_epoch = math.ceil(len(dataset) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    sched = Schedule(cfg.max_lr(), int(round(cfg.warmup_frac * total)), total)
    state = OptimState(cfg.momentum, cfg.weight_decay)
    rows = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(dataset))
        losses = []
        for b in range(steps_per_epoch):
            batch = augment([dataset[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]], cfg, rng)
            x = T.Tensor(np.concatenate([s.image for s in batch]))
            gt = np.concatenate([s.mask for s in batch])
            out = forward(x, model, train=True)
            loss, _ = total_loss(out, gt, cfg.gamma, cfg.k, cfg.loss_mode, cfg.mls)
            value = loss.item()
            if not math.isfinite(value):
                raise DivergenceError(step, value)
            model.store.zero_grad()
            T.backward(loss)
            lrs = {g: lr_at(sched, step, g) for g in ("encoder", "rest")}
            sgd_step(model.store, state, lrs)
            losses.append(value)
            if on_step:
                on_step(step, value)
            step += 1
        val_mae = val_mf = None
        if val:
            val_mae, val_mf = evaluate_samples(model, val, cfg.size)
        row = {
            "epoch": epoch,
            "step": step,
            "loss": float(np.mean(losses)),
            "val_mae": val_mae,
            "val_mf": val_mf,
            "lr": lr_at(sched, min(step, total), "rest"),
        }
        rows.append(row)
        log.info("epoch %d loss %.4f val_mae %s val_mf %s", epoch, row["loss"], val_mae, val_mf)
    model.store.zero_grad()
    return TrainResult(model, rows)


def save_run(result: TrainResult, cfg: TrainConfig, out_dir) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoint.f3k"
    log_path = out_dir / "train_log.csv"
    checkpoint.save(ckpt, result.model, {"train": asdict(cfg), "size": cfg.size})
    log_path.write_text(result.log_csv())
    return ckpt, log_path
