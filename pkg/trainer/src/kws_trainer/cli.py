"""Trainer command line: record features, train, check engine parity."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import engine_eval, record
from .dataset import load_feature_dir
from .formats import load_weights, write_norm_features
from .train import TrainConfig, train_qat


def cmd_record(args) -> int:
    calib = Path(args.calib) if args.calib else Path(args.outdir) / "front.calib"
    if not calib.exists():
        record.calibrate(calib, corpus_manifest=args.manifest,
                         corpus_limit=args.corpus_limit, seed=args.seed)
    index = record.record_features(args.manifest, args.outdir, calib, seed=args.seed)
    print(f"recorded features indexed at {index}")
    return 0


def cmd_train(args) -> int:
    class_names = args.class_names.split(",")
    dataset = load_feature_dir(args.features, class_names)
    cfg = TrainConfig(epochs=args.epochs, seed=args.seed,
                      batch_size=args.batch_size)
    result = train_qat(dataset, cfg)
    result.save(args.output, args.log)
    last = result.log[-1]
    print(json.dumps({"weights": args.output, **last}, sort_keys=True))
    return 0


def cmd_parity(args) -> int:
    """Compare this package's quantized forward with the deployed engine."""
    import tempfile

    class_names = args.class_names.split(",")
    dataset = load_feature_dir(args.features, class_names)
    frames, lengths, labels = dataset.subset(args.split)
    if args.limit:
        frames, lengths, labels = (a[: args.limit] for a in (frames, lengths, labels))
    net = load_weights(args.weights)
    local_pred, _ = engine_eval.forward_last_hidden(net, frames, lengths)
    agree = 0
    with tempfile.TemporaryDirectory() as td:
        for i in range(frames.shape[0]):
            f = Path(td) / f"{i}.tdfx"
            write_norm_features(f, frames[i, : lengths[i]])
            engine_pred = record.classify_features(f, args.weights)
            agree += int(engine_pred == int(local_pred[i]))
    rate = agree / frames.shape[0]
    print(f"parity {agree}/{frames.shape[0]} = {rate:.4f}")
    return 0 if rate >= args.threshold else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kws-trainer")
    parser.add_argument("--seed", type=int, default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("record", help="run the front end over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--calib", help="existing calibration; derived if absent")
    p.add_argument("--corpus-limit", type=int, default=100)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("train", help="quantization-aware training + export")
    p.add_argument("--features", required=True, help="recorded feature directory")
    p.add_argument("--class-names", required=True, help="comma-separated, 12 entries")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("-o", "--output", required=True, help="weight file (.tdkw)")
    p.add_argument("--log", help="JSON-lines training log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("parity", help="argmax agreement with the deployed engine")
    p.add_argument("--features", required=True)
    p.add_argument("--class-names", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--limit", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.995)
    p.set_defaults(func=cmd_parity)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
