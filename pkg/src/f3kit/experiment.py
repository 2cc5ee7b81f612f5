"""End-to-end synthetic runs: generate data, train variants, score the test split."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

from .data import load_dataset
from .synthetic import gen_synthetic
from .train import TrainConfig, evaluate_samples, train

log = logging.getLogger(__name__)

# offset between the training-split and test-split generator seeds
TEST_SEED_OFFSET = 10_000

VARIANTS = {
    "ppa": {},
    "bce": {"loss_mode": "bce"},
    "single_decoder": {"cfd": False},
    "plain_fusion": {"cfm": False},
}


@dataclass
class RunResult:
    variant: str
    seed: int
    test_mae: float
    test_mf: float
    seconds: float

    def to_dict(self) -> dict:
        return asdict(self)


def make_splits(root, seed: int, n_train: int = 200, n_test: int = 50, size: int = 96):
    root = Path(root)
    train_dir, test_dir = root / f"train_{seed}", root / f"test_{seed}"
    if not (train_dir / "manifest.txt").is_file():
        gen_synthetic(train_dir, n_train, size, seed)
    if not (test_dir / "manifest.txt").is_file():
        gen_synthetic(test_dir, n_test, size, seed + TEST_SEED_OFFSET)
    return load_dataset(train_dir), load_dataset(test_dir)


def run_variant(name: str, seed: int, train_set, test_set, base: TrainConfig | None = None) -> RunResult:
    cfg = replace(base or TrainConfig(), seed=seed, **VARIANTS[name])
    t0 = time.perf_counter()
    result = train(cfg, train_set)
    seconds = time.perf_counter() - t0
    mae, mf = evaluate_samples(result.model, test_set, cfg.size)
    log.info("%s seed %d: test MAE %.4f mF %.4f in %.0f s", name, seed, mae, mf, seconds)
    return RunResult(name, seed, mae, mf, seconds)
