"""Seconds per epoch as the input length grows, offline versus online.

With a fixed window count the attention sequence length never changes, so
precomputed (offline) features give flat epoch times; recomputing features
every epoch (online) grows with the input length.
"""

import argparse
import json
from pathlib import Path

from sigformer.features import FeatureConfig
from sigformer.net import ModelConfig
from sigformer.train import TrainConfig, bench_epoch_time


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lengths", default="500,1000,2500,10000,20000")
    ap.add_argument("--windows", type=int, default=40)
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=12)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--batch-size", type=int, default=16)
    ap.add_argument("--d-model", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="scaling_results.json")
    args = ap.parse_args()

    config = TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, seed=args.seed,
        learning_rate=1e-3,
        features=FeatureConfig("multiview", args.depth, args.windows, time_augment=True),
        model=ModelConfig(d_model=args.d_model, dtype="float32"),
    )
    records = bench_epoch_time(
        [int(x) for x in args.lengths.split(",")], config,
        num_classes=args.classes, samples_per_class=args.per_class,
        epochs=args.epochs, warmup=1,
    )
    print(f"{'L':>8} {'transform(s)':>13} {'offline s/e':>12} {'online s/e':>11} {'attn ops':>14}")
    for r in records:
        print(f"{r.length:>8} {r.transform_seconds:>13.3f} {r.offline_epoch_seconds:>12.3f} "
              f"{r.online_epoch_seconds:>11.3f} {r.attention_ops_per_epoch:>14}")
    Path(args.out).write_text(
        json.dumps([r.to_dict() for r in records], indent=2) + "\n"
    )
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
