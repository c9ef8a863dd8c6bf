"""``approxtrain``: train a residual CNN and export it for approxlab.

The exported artifacts (net.json/net.bin, eval_split.json/.bin,
manifest.json) plug directly into ``approxlab resilience sweep|full``.
"""

from __future__ import annotations

import argparse
import json
import sys

from .datasets import DatasetUnavailable, load_cifar10, load_mnist, \
    make_textures
from .export import ExportRefused, train_and_export
from .model import ARCHS, ArchConfig


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="approxtrain",
        description="train and export quantized residual CNNs")
    p.add_argument("--dataset", choices=["cifar10", "mnist", "textures"],
                   default="cifar10")
    p.add_argument("--cache", default="data",
                   help="download cache for cifar10/mnist")
    p.add_argument("--arch", choices=sorted(ARCHS), default="resnet8")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-count", type=int, default=1000,
                   help="held-out images written to the eval split")
    p.add_argument("--train-count", type=int, default=0,
                   help="cap training images (0: all)")
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("-O", "--out-dir", default="export")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.dataset == "cifar10":
            train_x, train_y, eval_x, eval_y = load_cifar10(args.cache)
        elif args.dataset == "mnist":
            train_x, train_y, eval_x, eval_y = load_mnist(args.cache)
        else:
            train_x, train_y, eval_x, eval_y = make_textures(seed=args.seed)
    except DatasetUnavailable as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.train_count:
        train_x, train_y = train_x[:args.train_count], train_y[:args.train_count]
    eval_x, eval_y = eval_x[:args.eval_count], eval_y[:args.eval_count]

    arch = ARCHS[args.arch]
    if arch.n_classes != int(train_y.max()) + 1:
        arch = ArchConfig(widths=arch.widths,
                          blocks_per_stage=arch.blocks_per_stage,
                          stem_stride=arch.stem_stride,
                          n_classes=int(train_y.max()) + 1)
    try:
        manifest = train_and_export(
            arch=arch, train_x=train_x, train_y=train_y, eval_x=eval_x,
            eval_y=eval_y, epochs=args.epochs, seed=args.seed,
            out_dir=args.out_dir, lr=args.lr, batch_size=args.batch_size,
            augment=not args.no_augment)
    except ExportRefused as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
