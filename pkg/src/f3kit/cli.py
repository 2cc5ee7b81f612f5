"""Command-line entry point: gen-data, train, infer, eval, weightmap, experiment.

Exit codes: 0 ok, 2 usage (bad flags, sizes not divisible by 32), 3 missing or
unreadable files, 4 malformed data or corrupt checkpoint, 5 training diverged.

Settings for ``train`` come from, in increasing precedence: built-in defaults,
a ``--config`` file of ``key=value`` lines, then explicit flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_DIVERGED = 0, 2, 3, 4, 5
THREADS_ENV = "F3KIT_THREADS"

TRAIN_HELP = {
    "gamma": "boundary weight strength in the pixel weight 1 + gamma*alpha",
    "k": "odd window size used to compute alpha from the mask",
    "n_decoders": "number of cascaded sub-decoders",
    "batch_size": "images per step",
    "epochs": "passes over the training set",
    "seed": "seed for initialisation, shuffling and augmentation",
    "loss_mode": "per-map loss: ppa, bce, iou or bce+iou",
    "mls": "auxiliary losses on intermediate decoder levels",
    "cfm": "cross feature fusion (off: plain addition)",
    "cfd": "cascaded feedback decoder (off: one sub-decoder)",
    "size": "training resolution, a multiple of 32",
    "lr_encoder": "peak learning rate of the encoder at the reference batch",
    "lr_rest": "peak learning rate of the decoder at the reference batch",
    "reference_batch": "batch size the peak learning rates refer to",
    "warmup_frac": "fraction of steps spent warming up",
    "momentum": "SGD momentum",
    "weight_decay": "L2 penalty on convolution kernels",
    "flip": "random horizontal flips",
    "crop_min": "smallest random-crop side ratio, in (0.5, 1]",
    "multiscale": "per-batch rescaling by 0.75, 1 or 1.25",
}


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ parsing


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"not a boolean: {text!r}")


def read_config(path) -> dict:
    """Flat ``key=value`` file; ``#`` starts a comment; keys are train settings."""
    from .train import TrainConfig

    types = TrainConfig.field_types()
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise UsageError(f"{path}:{n}: unknown setting {key!r}")
        try:
            out[key] = _parse_bool(value) if types[key] is bool else types[key](value)
        except ValueError as e:
            raise UsageError(f"{path}:{n}: bad value for {key}: {value!r}") from e
    return out


class _Parser(argparse.ArgumentParser):
    def __init__(self, *a, **kw):
        kw.setdefault("allow_abbrev", False)
        super().__init__(*a, **kw)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    from .train import TrainConfig

    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = _Parser(prog="f3kit", description="Salient object detection toolkit.", formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", help="render a synthetic dataset", formatter_class=fmt)
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--count", type=int, default=200, help="number of image/mask pairs")
    g.add_argument("--size", type=int, default=96, help="side length, a multiple of 32")
    g.add_argument("--seed", type=int, default=0, help="generator seed")

    t = sub.add_parser("train", help="train a model", formatter_class=fmt)
    t.add_argument("--data", required=True, help="dataset root (images/, masks/, optional manifest.txt)")
    t.add_argument("--val", default=None, help="optional validation dataset root")
    t.add_argument("--out", required=True, help="directory for checkpoint.f3k and train_log.csv")
    t.add_argument("--config", default=None, help="key=value settings file; flags override it")
    defaults = TrainConfig()
    for f in fields(TrainConfig):
        value = getattr(defaults, f.name)
        if isinstance(value, bool):
            t.add_argument(_flag(f.name), action=argparse.BooleanOptionalAction, default=value, help=TRAIN_HELP[f.name])
        elif f.name == "loss_mode":
            t.add_argument(_flag(f.name), choices=["ppa", "bce", "iou", "bce+iou"], default=value, help=TRAIN_HELP[f.name])
        else:
            t.add_argument(_flag(f.name), type=type(value), default=value, help=TRAIN_HELP[f.name])

    i = sub.add_parser("infer", help="predict saliency maps", formatter_class=fmt)
    i.add_argument("--ckpt", required=True, help="checkpoint written by train")
    i.add_argument("--image", required=True, help="input image, or a directory of images")
    i.add_argument("--out", required=True, help="output PNG, or a directory when --image is one")

    e = sub.add_parser("eval", help="score saliency maps against masks", formatter_class=fmt)
    e.add_argument("--pred", required=True, help="directory of predicted maps")
    e.add_argument("--gt", required=True, help="directory of ground-truth masks")
    e.add_argument("--report", required=True, help="JSON report path")
    e.add_argument("--curves", default=None, help="curves CSV path (default: report path with .csv)")

    w = sub.add_parser("weightmap", help="render the boundary weight alpha of a mask", formatter_class=fmt)
    w.add_argument("--mask", required=True, help="binary 8-bit mask")
    w.add_argument("--k", type=int, default=9, help="odd window size")
    w.add_argument("--gamma", type=float, default=5.0, help="weight strength for --weight-out")
    w.add_argument("--out", required=True, help="PNG of alpha scaled to 0..255")
    w.add_argument("--weight-out", default=None, help="optional PNG of (1 + gamma*alpha) / (1 + gamma)")

    x = sub.add_parser("experiment", help="train and compare variants on synthetic splits", formatter_class=fmt)
    x.add_argument("--out", required=True, help="working directory for data and results.json")
    x.add_argument("--seeds", type=int, nargs="+", default=[0], help="data and training seeds")
    x.add_argument("--variants", nargs="+", default=["ppa", "bce"], help="ppa, bce, single_decoder, plain_fusion")
    x.add_argument("--epochs", type=int, default=20, help="epochs per run")
    return p


def train_config(args) -> "TrainConfig":
    from .train import TrainConfig

    names = [f.name for f in fields(TrainConfig)]
    values = {}
    if args.config:
        values.update(read_config(args.config))
    explicit = getattr(args, "_explicit", set())
    for n in names:
        if n in explicit or n not in values:
            values[n] = getattr(args, n)
    return TrainConfig(**values)


def _explicit_flags(argv: list[str]) -> set[str]:
    from .train import TrainConfig

    seen = set()
    for tok in argv:
        if not tok.startswith("--"):
            continue
        key = tok[2:].split("=", 1)[0]
        if key.startswith("no-"):
            key = key[3:]
        seen.add(key.replace("-", "_"))
    return seen & {f.name for f in fields(TrainConfig)}


# ----------------------------------------------------------------- commands


def _check_size(size: int) -> None:
    if size <= 0 or size % 32:
        raise UsageError(f"size {size} is not a positive multiple of 32")


def cmd_gen_data(args) -> int:
    from .synthetic import gen_synthetic

    _check_size(args.size)
    ids = gen_synthetic(args.out, args.count, args.size, args.seed)
    print(f"wrote {len(ids)} pairs to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .data import load_dataset
    from .train import save_run, train

    try:
        cfg = train_config(args)
    except ValueError as e:
        raise UsageError(str(e)) from e
    data = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    result = train(cfg, data, val)
    ckpt, log_path = save_run(result, cfg, args.out)
    print(f"checkpoint {ckpt}\nlog {log_path}")
    return EXIT_OK


def _infer_one(model, size: int, src: Path, dst: Path) -> None:
    from .data import read_rgb, write_gray
    from .model import infer
    from .tensor import resize_array

    img = read_rgb(src).astype(np.float64) / 255.0
    h, w = img.shape[:2]
    x = resize_array(img.transpose(2, 0, 1)[None], size, size)
    sal = infer(np.clip(x, 0.0, 1.0), model)[0, 0]
    write_gray(dst, np.clip(resize_array(sal, h, w), 0.0, 1.0))


def cmd_infer(args) -> int:
    from . import checkpoint
    from .data import IMAGE_SUFFIXES

    model, meta = checkpoint.load(args.ckpt)
    size = int(meta.get("size", 96))
    src = Path(args.image)
    if src.is_dir():
        files = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise FileNotFoundError(f"no images in {src}")
        for f in files:
            _infer_one(model, size, f, Path(args.out) / f"{f.stem}.png")
        print(f"wrote {len(files)} maps to {args.out}")
    else:
        _infer_one(model, size, src, Path(args.out))
        print(f"wrote {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate_dataset

    report = evaluate_dataset(args.pred, args.gt)
    rpath = Path(args.report)
    cpath = Path(args.curves) if args.curves else rpath.with_suffix(".csv")
    rpath.parent.mkdir(parents=True, exist_ok=True)
    cpath.parent.mkdir(parents=True, exist_ok=True)
    rpath.write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    cpath.write_text(report.curves_csv())
    s = report.summary()
    print(
        f"{report.count} images  MAE {s['mae']:.4f}  mF {s['mean_f']:.4f}  "
        f"S {s['s_measure']:.4f}  E {s['e_measure']:.4f}  maxF {report.f_curve.max():.4f}"
    )
    return EXIT_OK


def cmd_weightmap(args) -> int:
    from .data import DataFormatError, read_gray, write_gray
    from .losses import alpha_map

    if args.k < 1 or args.k % 2 == 0:
        raise UsageError(f"k must be a positive odd number, got {args.k}")
    raw = read_gray(args.mask)
    if not np.isin(raw, (0, 255)).all():
        raise DataFormatError(f"{args.mask}: mask is not binary (values other than 0 and 255)")
    alpha = alpha_map((raw == 255).astype(np.float64), args.k)
    write_gray(args.out, alpha)
    if args.weight_out:
        write_gray(args.weight_out, (1 + args.gamma * alpha) / (1 + args.gamma))
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    from dataclasses import replace

    from .experiment import VARIANTS, make_splits, run_variant
    from .train import TrainConfig

    unknown = set(args.variants) - set(VARIANTS)
    if unknown:
        raise UsageError(f"unknown variants: {', '.join(sorted(unknown))}")
    base = replace(TrainConfig(), epochs=args.epochs)
    results = []
    for seed in args.seeds:
        train_set, test_set = make_splits(args.out, seed)
        for v in args.variants:
            r = run_variant(v, seed, train_set, test_set, base)
            results.append(r.to_dict())
            print(f"{v:15s} seed {seed}  MAE {r.test_mae:.4f}  mF {r.test_mf:.4f}  {r.seconds:.0f} s", flush=True)
    Path(args.out, "results.json").write_text(json.dumps(results, indent=1) + "\n")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "weightmap": cmd_weightmap,
    "experiment": cmd_experiment,
}


def _limit_threads():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return None
    try:
        n = int(value)
    except ValueError as e:
        raise UsageError(f"{THREADS_ENV} must be an integer, got {value!r}") from e
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be >= 1, got {n}")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    from .checkpoint import CheckpointError
    from .data import DataFormatError
    from .train import DivergenceError

    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        args._explicit = _explicit_flags(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        limiter = _limit_threads()
        try:
            return COMMANDS[args.command](args)
        finally:
            if limiter is not None:
                limiter.unregister()
    except UsageError as e:
        print(f"f3kit: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as e:
        print(f"f3kit: training diverged: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DataFormatError, CheckpointError) as e:
        print(f"f3kit: bad input: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as e:
        print(f"f3kit: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"f3kit: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
