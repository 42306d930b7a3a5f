"""Command-line entry point: ``lmtcnn {train,eval,predict,bench,inspect,synth}``.

Exit codes: 0 success, 1 runtime failure, 2 bad flags.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from fractions import Fraction

import numpy as np

from . import kernels
from .cost import network_cost, param_count
from .errors import InvalidMultiplier, LmtcnnError
from .model_io import VERSION, load_model, save_model
from .network import NetworkConfig, build_lmtcnn, predict
from .pipeline import (
    AGE_GROUPS,
    GENDERS,
    kfold_split,
    materialize,
    oversample,
    predict_oversampled,
    read_image,
    read_manifest,
    scaled_size,
    single_crop,
    synth_dataset,
)
from .tensor import Rng
from .training import TrainConfig, evaluate, train

log = logging.getLogger("lmtcnn")

DEFAULT_ALPHA1 = "2"
DEFAULT_ALPHA2 = "1"


def _fraction(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a rational number: {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("width multiplier must be positive")
    return value


def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _add_arch(p):
    p.add_argument("--alpha1", type=_fraction, default=Fraction(DEFAULT_ALPHA1),
                   help="width multiplier of separable block 1 (default 2)")
    p.add_argument("--alpha2", type=_fraction, default=Fraction(DEFAULT_ALPHA2),
                   help="width multiplier of separable block 2 (default 1)")
    p.add_argument("--input-size", type=_positive, default=227)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmtcnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--threads", type=_positive, default=1,
                        help="worker threads for evaluation (default 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on one fold and write a model file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", help="manifest CSV (path,age,gender,fold)")
    src.add_argument("--synth", type=_positive, metavar="N", help="use N synthetic images")
    _add_arch(p)
    p.add_argument("--epochs", type=_positive, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch", type=_positive, default=64)
    p.add_argument("--gender-weight", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--folds", type=_positive, default=5, help="k for k-fold splitting")
    p.add_argument("--all-train", action="store_true",
                   help="train on every record instead of the fold's training split")
    p.add_argument("--log", help="also write the epoch log to this file")
    p.add_argument("--out", required=True, help="output model path")

    p = sub.add_parser("eval", help="score a model on a fold's test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--folds", type=_positive, default=5)
    p.add_argument("--split", choices=("test", "validation", "train", "all"), default="test")
    p.add_argument("--oversample", action="store_true", help="ten-crop protocol")

    p = sub.add_parser("predict", help="age and gender for one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--oversample", action="store_true")

    p = sub.add_parser("bench", help="cost report and forward latency")
    _add_arch(p)
    p.add_argument("--repeats", type=_positive, default=5)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("inspect", help="describe a model file")
    p.add_argument("--model", required=True)

    p = sub.add_parser("synth", help="write a synthetic dataset (PNGs + manifest.csv)")
    p.add_argument("--n", type=_positive, default=256)
    p.add_argument("--size", type=_positive, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=_positive, default=5)
    p.add_argument("--out", required=True, help="output directory")
    return parser


# -- commands -----------------------------------------------------------------

def _select(splits, args):
    if args.fold < 0 or args.fold >= len(splits):
        raise LmtcnnError(f"--fold must be in [0, {len(splits)})")
    return splits[args.fold]


def cmd_train(args) -> int:
    if args.manifest:
        manifest = read_manifest(args.manifest)
    else:
        manifest = synth_dataset(args.synth, args.input_size, args.seed, folds=args.folds)
    splits = kfold_split(manifest, args.folds, args.seed)
    split = _select(splits, args)
    if args.all_train:
        split = type(split)(tuple(range(len(manifest))), (), ())
    params = build_lmtcnn(args.alpha1, args.alpha2, args.input_size, rng=Rng(args.seed))
    cfg = TrainConfig(args.lr, args.momentum, args.batch, args.epochs, args.gender_weight, args.seed)
    lines = []

    def emit(entry):
        lines.append(entry.line())
        print(entry.line(), flush=True)

    train(params, manifest, split, cfg, on_epoch=emit)
    save_model(params, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return 0


def cmd_eval(args) -> int:
    params = load_model(args.model)
    manifest = read_manifest(args.manifest)
    if args.split == "all":
        indices = range(len(manifest))
    else:
        split = _select(kfold_split(manifest, args.folds), args)
        indices = getattr(split, args.split)
    metrics = evaluate(params, manifest, indices, use_oversampling=args.oversample,
                       threads=args.threads)
    print(metrics.line())
    return 0


def cmd_predict(args) -> int:
    params = load_model(args.model)
    image = read_image(args.image)
    if args.oversample:
        pred = predict_oversampled(params, image)
    else:
        pred = predict(params, single_crop(image, params.config.input_size))
    print("age_probs," + ",".join(f"{p:.6f}" for p in pred.age_probs))
    print("gender_probs," + ",".join(f"{p:.6f}" for p in pred.gender_probs))
    age_name = AGE_GROUPS[pred.age_label] if pred.age_label < len(AGE_GROUPS) else str(pred.age_label)
    gender_name = GENDERS[pred.gender_label] if pred.gender_label < len(GENDERS) else str(pred.gender_label)
    print(f"age_label,{pred.age_label},{age_name}")
    print(f"gender_label,{pred.gender_label},{gender_name}")
    return 0


def _median_ms(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return float(np.median(times))


def cmd_bench(args) -> int:
    config = NetworkConfig(args.input_size, args.alpha1, args.alpha2)
    print(f"{config.name}  input {args.input_size}  kernels: {kernels.BACKEND}")
    print(network_cost(config).to_table())
    params = build_lmtcnn(args.alpha1, args.alpha2, args.input_size, rng=Rng(args.seed))
    image = Rng(args.seed + 1).random((scaled_size(args.input_size),) * 2 + (3,)).astype(np.float32)
    crop = oversample(image, args.input_size)[4]
    predict(params, crop)  # warm-up
    single = _median_ms(lambda: predict(params, crop), args.repeats)
    ten = _median_ms(lambda: predict_oversampled(params, image), args.repeats)
    print("")
    print(f"single-crop latency: {single:.2f} ms/image (median of {args.repeats})")
    print(f"10-crop latency:     {ten:.2f} ms/image (median of {args.repeats})")
    return 0


def cmd_inspect(args) -> int:
    params = load_model(args.model)
    cfg = params.config
    report = param_count(params)
    print(f"format_version,{VERSION}")
    print(f"name,{cfg.name}")
    print(f"input_size,{cfg.input_size}")
    print(f"alpha1,{cfg.alpha1}")
    print(f"alpha2,{cfg.alpha2}")
    print(f"base_channels,{'x'.join(map(str, cfg.base_channels))}")
    print(f"fc_width,{cfg.fc_width}")
    print(f"heads,{cfg.age_classes},{cfg.gender_classes}")
    for name, t in params.tensors.items():
        print(f"tensor,{name},{'x'.join(map(str, t.shape))},{t.size}")
    print(f"total_params,{report.total_params}")
    print(f"file_size,{os.path.getsize(args.model)}")
    return 0


def cmd_synth(args) -> int:
    manifest = synth_dataset(args.n, args.size, args.seed, folds=args.folds)
    path = materialize(manifest, args.out)
    print(path)
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "bench": cmd_bench,
    "inspect": cmd_inspect,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except InvalidMultiplier as exc:
        parser.error(str(exc))
    except (LmtcnnError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
