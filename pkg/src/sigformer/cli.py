"""Command-line entry point: one binary, one subcommand per workflow stage.

Every run resolves its settings from defaults, an optional JSON config file
(unknown keys are rejected), and command-line flag overrides, in that order;
the fully resolved config is echoed into the output directory so any run can
be reproduced from its artifacts alone.  All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import net
from .features import (
    FeatureConfig,
    expected_width,
    load_feature_cache,
    make_grid,
    multiview_transform,
    save_feature_cache,
    series_hash,
    univariate_transform,
)
from .selfcheck import run_property_suite
from .train import TokenPipeline, TrainConfig, bench_epoch_time, evaluate, train

TASKS = ("sine", "sine-long", "spatial", "csv")


@dataclasses.dataclass
class DatasetSection:
    task: str = "sine"
    classes: int = 20
    per_class: int = 20
    samples: int = 1000  # spatial task only
    length: int = 500
    t_end: float = 1.0
    noise_sigma: float = 0.1
    trend_coeffs: list = dataclasses.field(default_factory=lambda: [1.0, 0.0, 0.5])
    switch_frac: float = 0.1
    equal_frac: float = 0.01
    split: list = dataclasses.field(default_factory=lambda: [0.7, 0.15, 0.15])
    csv_path: str | None = None
    csv_task: str = "classify"


@dataclasses.dataclass
class ModelSection:
    d_model: int = 32
    d_ff: int | None = None
    num_blocks: int = 1
    use_positional: bool = True
    dtype: str = "float64"


@dataclasses.dataclass
class FeatureSection:
    mode: str = "multiview"
    depth: int = 2
    windows: int = 40
    univariate: bool = False
    time_augment: bool = False


@dataclasses.dataclass
class TrainSection:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    drop_prob: float = 0.0
    feature_mode: str = "offline"
    token_mode: str = "signature"
    standardize: bool = True
    patience: int | None = None


@dataclasses.dataclass
class RunConfig:
    seed: int = 0
    dataset: DatasetSection = dataclasses.field(default_factory=DatasetSection)
    features: FeatureSection = dataclasses.field(default_factory=FeatureSection)
    model: ModelSection = dataclasses.field(default_factory=ModelSection)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _section_from_dict(cls, payload: dict, path: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - known
    if unknown:
        raise ValueError(f"unknown config keys under {path!r}: {sorted(unknown)}")
    return cls(**payload)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        payload = json.load(fh)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(payload) - known
    if unknown:
        raise ValueError(f"unknown top-level config keys: {sorted(unknown)}")
    sections = {}
    for name, cls in (
        ("dataset", DatasetSection),
        ("features", FeatureSection),
        ("model", ModelSection),
        ("train", TrainSection),
    ):
        if name in payload:
            sections[name] = _section_from_dict(cls, payload[name], name)
    return RunConfig(seed=payload.get("seed", 0), **sections)


def _apply_overrides(config: RunConfig, args) -> RunConfig:
    if args.seed is not None:
        config.seed = args.seed
    mapping = [
        ("task", config.dataset, "task"),
        ("length", config.dataset, "length"),
        ("classes", config.dataset, "classes"),
        ("per_class", config.dataset, "per_class"),
        ("samples", config.dataset, "samples"),
        ("mode", config.features, "mode"),
        ("depth", config.features, "depth"),
        ("windows", config.features, "windows"),
        ("epochs", config.train, "epochs"),
        ("batch_size", config.train, "batch_size"),
        ("learning_rate", config.train, "learning_rate"),
        ("drop_prob", config.train, "drop_prob"),
        ("feature_mode", config.train, "feature_mode"),
        ("token_mode", config.train, "token_mode"),
        ("d_model", config.model, "d_model"),
        ("data", config.dataset, "csv_path"),
    ]
    for flag, section, attr in mapping:
        value = getattr(args, flag, None)
        if value is not None:
            setattr(section, attr, value)
    if getattr(args, "univariate", False):
        config.features.univariate = True
    if getattr(args, "time_augment", False):
        config.features.time_augment = True
    return config


def resolve_config(args) -> RunConfig:
    config = load_run_config(args.config) if args.config else RunConfig()
    return _apply_overrides(config, args)


def build_dataset(config: RunConfig) -> data_mod.Dataset:
    ds = config.dataset
    if ds.task == "sine":
        return data_mod.gen_sinusoidal(
            ds.classes, ds.per_class, ds.length, ds.t_end, ds.noise_sigma,
            tuple(ds.trend_coeffs), seed=config.seed, split_fractions=tuple(ds.split),
        )
    if ds.task == "sine-long":
        return data_mod.gen_long_sinusoidal(
            ds.classes, ds.per_class, ds.length, ds.t_end, ds.noise_sigma,
            tuple(ds.trend_coeffs), switch_frac=ds.switch_frac,
            seed=config.seed, split_fractions=tuple(ds.split),
        )
    if ds.task == "spatial":
        return data_mod.gen_spatial_pair(
            ds.samples, ds.length, ds.equal_frac,
            seed=config.seed, split_fractions=tuple(ds.split),
        )
    if ds.task == "csv":
        if not ds.csv_path:
            raise ValueError("task 'csv' needs dataset.csv_path (or --data)")
        return data_mod.load_csv(
            ds.csv_path, task=ds.csv_task,
            split_fractions=tuple(ds.split), split_seed=config.seed,
        )
    raise ValueError(f"unknown dataset task {ds.task!r}")


def make_train_config(config: RunConfig) -> TrainConfig:
    return TrainConfig(
        epochs=config.train.epochs,
        learning_rate=config.train.learning_rate,
        batch_size=config.train.batch_size,
        seed=config.seed,
        drop_prob=config.train.drop_prob,
        feature_mode=config.train.feature_mode,
        token_mode=config.train.token_mode,
        standardize=config.train.standardize,
        patience=config.train.patience,
        features=FeatureConfig(
            mode=config.features.mode,
            depth=config.features.depth,
            num_windows=config.features.windows,
            univariate=config.features.univariate,
            time_augment=config.features.time_augment,
        ),
        model=net.ModelConfig(
            d_model=config.model.d_model,
            d_ff=config.model.d_ff,
            num_blocks=config.model.num_blocks,
            use_positional=config.model.use_positional,
            dtype=config.model.dtype,
        ),
    )


def _prepare_out_dir(args, config: RunConfig) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return out


def cmd_generate(args) -> int:
    config = resolve_config(args)
    out = _prepare_out_dir(args, config)
    dataset = build_dataset(config)
    csv_path = out / "data.csv"
    data_mod.save_csv(dataset, csv_path)
    provenance = {
        "provenance": dataset.provenance,
        "task": dataset.task,
        "num_outputs": dataset.num_outputs,
        "num_samples": len(dataset.samples),
        "splits": dataset.splits,
        "csv_sha256": data_mod.file_hash(csv_path),
    }
    with open(out / "provenance.json", "w") as fh:
        json.dump(provenance, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(dataset.samples)} series to {csv_path}")
    return 0


def cmd_features(args) -> int:
    config = resolve_config(args)
    out = _prepare_out_dir(args, config)
    if config.dataset.csv_path:
        config.dataset.task = "csv"
    dataset = build_dataset(config)
    if config.dataset.task == "csv":
        dataset_hash = data_mod.file_hash(config.dataset.csv_path)
    else:
        dataset_hash = json.dumps(dataset.provenance, sort_keys=True)

    cache_path = out / "features.npz"
    fc = FeatureConfig(
        mode=config.features.mode,
        depth=config.features.depth,
        num_windows=config.features.windows,
        univariate=config.features.univariate,
        time_augment=config.features.time_augment,
    )
    meta_path = out / "features.meta.json"
    if cache_path.exists() and meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
            if meta.get("dataset_hash") == dataset_hash and meta.get("features") == dataclasses.asdict(config.features):
                load_feature_cache(cache_path)
                print(f"cache hit: {cache_path} is current, nothing to do")
                return 0
            print("cache present but stale, recomputing", file=sys.stderr)
        except Exception as exc:  # corrupted cache: recompute
            print(f"warning: unreadable cache ({exc}), recomputing", file=sys.stderr)

    start, end = dataset.domain()
    grid = make_grid(start, end, fc.num_windows)
    tic = time.perf_counter()
    mats, hashes = [], []
    for sample in dataset.samples:
        if fc.univariate:
            fm = univariate_transform(sample, grid, fc.depth, fc.mode)
        else:
            fm = multiview_transform(sample, grid, fc.depth, fc.mode, fc.time_augment)
        mats.append(fm.data)
        hashes.append(series_hash(sample))
    elapsed = time.perf_counter() - tic
    stack = np.stack(mats)
    save_feature_cache(cache_path, stack, grid, fc, hashes)
    meta_path.write_text(
        json.dumps(
            {"dataset_hash": dataset_hash, "features": dataclasses.asdict(config.features)},
            indent=2, sort_keys=True,
        )
        + "\n"
    )
    width = expected_width(dataset.dim, fc.depth, fc.mode, fc.univariate, fc.time_augment)
    assert stack.shape[2] == width
    print(
        f"transformed {stack.shape[0]} series in {elapsed:.2f}s: "
        f"windows={stack.shape[1]} width={stack.shape[2]}"
    )
    return 0


def cmd_train(args) -> int:
    config = resolve_config(args)
    out = _prepare_out_dir(args, config)
    dataset = build_dataset(config)
    train_cfg = make_train_config(config)
    result = train(dataset, train_cfg)

    with open(out / "metrics.jsonl", "w") as fh:
        for record in result.records:
            fh.write(json.dumps(record.to_dict()) + "\n")

    report = evaluate(dataset, result.params, train_cfg, "test", result.pipeline)
    rng_state = np.random.default_rng(config.seed).bit_generator.state
    net.save_checkpoint(
        out / "checkpoint.npz", result.params,
        config_echo=config.to_dict(), rng_state=rng_state,
    )
    summary = {
        "diverged": result.diverged,
        "epochs_run": len(result.records),
        "final_train_loss": result.records[-1].train_loss if result.records else None,
        "final_val_metric": result.records[-1].val_metric if result.records else None,
        "test": report,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    metric = "accuracy" if dataset.task == "classify" else "rmse"
    print(f"test {metric}: {report[metric]:.4f} ({len(result.records)} epochs)")
    return 1 if result.diverged else 0


def cmd_eval(args) -> int:
    config = resolve_config(args)
    out = _prepare_out_dir(args, config)
    params, echo, _ = net.load_checkpoint(args.checkpoint)
    if args.config is None and echo:
        # fall back to the training-time config echoed into the checkpoint
        sections = {
            name: _section_from_dict(cls, echo[name], name)
            for name, cls in (
                ("dataset", DatasetSection), ("features", FeatureSection),
                ("model", ModelSection), ("train", TrainSection),
            )
        }
        config = _apply_overrides(RunConfig(seed=echo["seed"], **sections), args)
    dataset = build_dataset(config)
    # --drop-prob here means drop at evaluation time, not during training
    config.train.drop_prob = 0.0
    config.train.feature_mode = "offline"
    train_cfg = make_train_config(config)
    report = evaluate(
        dataset, params, train_cfg, split=args.split,
        drop_prob=args.drop_prob or 0.0, drop_seed=config.seed,
    )
    with open(out / "eval.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_bench(args) -> int:
    config = resolve_config(args)
    out = _prepare_out_dir(args, config)
    lengths = [int(x) for x in args.lengths.split(",")]
    train_cfg = make_train_config(config)
    records = bench_epoch_time(
        lengths, train_cfg,
        num_classes=args.bench_classes, samples_per_class=args.bench_per_class,
        epochs=args.bench_epochs, warmup=1,
    )
    with open(out / "bench.json", "w") as fh:
        json.dump([r.to_dict() for r in records], fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{'L':>8} {'transform(s)':>13} {'offline s/e':>12} {'online s/e':>11} {'attn ops':>12}")
    for r in records:
        print(
            f"{r.length:>8} {r.transform_seconds:>13.3f} {r.offline_epoch_seconds:>12.3f} "
            f"{r.online_epoch_seconds:>11.3f} {r.attention_ops_per_epoch:>12}"
        )
    return 0


def cmd_check_sig(args) -> int:
    report = run_property_suite(
        trials=args.trials, max_dim=args.max_dim,
        max_depth=args.max_depth, max_segments=args.max_segments, seed=args.seed or 0,
    )
    for line in report.lines(args.tolerance):
        print(line)
    if report.passed(args.tolerance):
        print(f"all signature properties hold over {report.trials} random paths")
        return 0
    print("signature property check FAILED", file=sys.stderr)
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sigformer",
        description="windowed signature features + single-head attention runs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_dir=True):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", type=str, default=None, help="JSON config file")
        if out_dir:
            p.add_argument("--out-dir", type=str, default="runs/latest")
        p.add_argument("--task", choices=TASKS, default=None)
        p.add_argument("--length", type=int, default=None)
        p.add_argument("--classes", type=int, default=None)
        p.add_argument("--per-class", dest="per_class", type=int, default=None)
        p.add_argument("--samples", type=int, default=None)
        p.add_argument("--data", type=str, default=None, help="CSV dataset path")
        p.add_argument("--mode", choices=("local", "global", "multiview"), default=None)
        p.add_argument("--depth", type=int, default=None)
        p.add_argument("--windows", type=int, default=None)
        p.add_argument("--univariate", action="store_true")
        p.add_argument("--time-augment", dest="time_augment", action="store_true")
        p.add_argument("--epochs", type=int, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--learning-rate", dest="learning_rate", type=float, default=None)
        p.add_argument("--drop-prob", dest="drop_prob", type=float, default=None)
        p.add_argument("--feature-mode", dest="feature_mode",
                       choices=("online", "offline"), default=None)
        p.add_argument("--token-mode", dest="token_mode",
                       choices=("signature", "raw"), default=None)
        p.add_argument("--d-model", dest="d_model", type=int, default=None)

    common(sub.add_parser("generate", help="write a synthetic dataset as CSV"))
    common(sub.add_parser("features", help="compute and cache the feature matrices"))
    common(sub.add_parser("train", help="train a model and write metrics/checkpoint"))

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=str, required=True)
    p_eval.add_argument("--split", choices=("train", "val", "test"), default="test")

    p_bench = sub.add_parser("bench", help="seconds/epoch across input lengths")
    common(p_bench)
    p_bench.add_argument("--lengths", type=str, default="500,2500,10000")
    p_bench.add_argument("--bench-classes", type=int, default=4)
    p_bench.add_argument("--bench-per-class", type=int, default=12)
    p_bench.add_argument("--bench-epochs", type=int, default=5)

    p_check = sub.add_parser("check-sig", help="randomized signature identity checks")
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--trials", type=int, default=200)
    p_check.add_argument("--max-depth", dest="max_depth", type=int, default=5)
    p_check.add_argument("--max-dim", dest="max_dim", type=int, default=4)
    p_check.add_argument("--max-segments", dest="max_segments", type=int, default=50)
    p_check.add_argument("--tolerance", type=float, default=1e-12)

    return parser


COMMANDS = {
    "generate": cmd_generate,
    "features": cmd_features,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "check-sig": cmd_check_sig,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
