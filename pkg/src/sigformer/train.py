"""Deterministic training and evaluation on top of the token pipeline.

All randomness flows from the config seed: shuffling draws from
(seed, epoch), per-epoch point drops from (seed, epoch, sample index), so a
run is a pure function of (dataset, config).  Features are either computed
once before the first epoch (offline) or recomputed every epoch (online);
training under random drops requires the online mode because each epoch sees
a different thinning of every training series.  Validation and test series
are never drop-augmented during training.
"""

from __future__ import annotations

import time
from contextlib import nullcontext
from dataclasses import dataclass, field, replace

import numpy as np

from . import net
from .data import Dataset, gen_sinusoidal
from .features import (
    FeatureConfig,
    FeatureScaler,
    WindowGrid,
    make_grid,
    multiview_transform,
    random_drop,
    univariate_transform,
)

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "TrainResult",
    "TokenPipeline",
    "AdamState",
    "init_adam_state",
    "adam_step",
    "train",
    "evaluate",
    "BenchRecord",
    "bench_epoch_time",
]

# seed-derivation tags keep the shuffle / drop / eval-drop streams disjoint
_SHUFFLE_TAG = 11
_DROP_TAG = 22
_EVAL_DROP_TAG = 33


def _single_thread_blas():
    """Cap BLAS pools at one thread for the duration of a run.

    The training loop issues thousands of small matmuls; on small machines
    the BLAS thread handshake costs more than the parallelism returns, and
    the elementwise kernels already use the spare core.
    """
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1, user_api="blas")
    except Exception:  # library missing: run with whatever the host does
        return nullcontext()


@dataclass
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 32
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    drop_prob: float = 0.0
    feature_mode: str = "offline"  # offline | online
    token_mode: str = "signature"  # signature | raw
    standardize: bool = True
    patience: int | None = None
    features: FeatureConfig = field(default_factory=FeatureConfig)
    model: net.ModelConfig = field(default_factory=net.ModelConfig)

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not 0.0 <= self.drop_prob < 1.0:
            raise ValueError("drop_prob must be in [0, 1)")
        if self.feature_mode not in ("offline", "online"):
            raise ValueError(f"unknown feature_mode {self.feature_mode!r}")
        if self.token_mode not in ("signature", "raw"):
            raise ValueError(f"unknown token_mode {self.token_mode!r}")
        if self.drop_prob > 0 and self.feature_mode != "online":
            raise ValueError("drop_prob > 0 requires feature_mode='online'")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_metric: float
    seconds: float

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_metric": self.val_metric,
            "seconds": self.seconds,
        }


@dataclass
class TrainResult:
    params: net.ModelParams
    records: list[EpochRecord]
    pipeline: "TokenPipeline"
    diverged: bool = False


@dataclass
class TokenPipeline:
    """Dataset-wide token recipe: fixed window grid plus frozen scaler.

    The grid spans the dataset's full time domain so every sample, however it
    is (sub)sampled, is summarized over the same integration bounds.
    """

    config: TrainConfig
    grid: WindowGrid | None
    scaler: FeatureScaler | None

    @classmethod
    def build(cls, dataset: Dataset, config: TrainConfig) -> "TokenPipeline":
        grid = None
        if config.token_mode == "signature":
            start, end = dataset.domain()
            grid = make_grid(start, end, config.features.num_windows)
        pipeline = cls(config, grid, None)
        if config.standardize:
            train_tokens = [
                pipeline.tokenize(dataset.samples[i]) for i in dataset.splits["train"]
            ]
            pipeline.scaler = FeatureScaler.fit(train_tokens)
        return pipeline

    def tokenize(self, sample) -> np.ndarray:
        fc = self.config.features
        if self.config.token_mode == "raw":
            tokens = np.hstack([sample.times[:, None], sample.values])
        elif fc.univariate:
            tokens = univariate_transform(sample, self.grid, fc.depth, fc.mode).data
        else:
            tokens = multiview_transform(
                sample, self.grid, fc.depth, fc.mode, fc.time_augment
            ).data
        if self.scaler is not None:
            tokens = self.scaler.transform(tokens)
        return tokens


@dataclass
class AdamState:
    step: int
    m: dict
    v: dict


def init_adam_state(params: net.ModelParams) -> AdamState:
    return AdamState(
        step=0,
        m={name: np.zeros_like(arr) for name, arr in params.named_parameters()},
        v={name: np.zeros_like(arr) for name, arr in params.named_parameters()},
    )


def adam_step(
    params: net.ModelParams,
    grads: dict,
    state: AdamState,
    lr: float,
    betas=(0.9, 0.999),
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update, applied in place to every tensor."""
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, arr in params.named_parameters():
        g = grads[name]
        if g.shape != arr.shape:
            raise ValueError(f"gradient shape mismatch for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        arr -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


def _pad_batch(tokens: list, idx):
    """Stack a batch of token matrices, zero-padding ragged lengths.

    Returns (stacked, lengths) where lengths is None when every sample in
    the batch already has the same row count.
    """
    lengths = np.array([tokens[i].shape[0] for i in idx], dtype=np.int64)
    lmax = int(lengths.max())
    if np.all(lengths == lmax):
        return np.stack([tokens[i] for i in idx]), None
    padded = np.zeros((len(idx), lmax, tokens[idx[0]].shape[1]))
    for row, i in enumerate(idx):
        padded[row, : lengths[row]] = tokens[i]
    return padded, lengths


def _forward_loss(tokens, targets, params, task, lengths=None):
    logits, cache = net.model_forward(tokens, params, task, lengths=lengths)
    value, dlogits = net.loss(logits, targets, task)
    return value, dlogits, cache, logits


def _eval_tokens(tokens: list, targets: np.ndarray, params, task, batch_size):
    """Loss and metric over a token list, in padded batches."""
    total_loss = 0.0
    n = len(tokens)
    correct = 0
    sq_err = 0.0
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        stacked, lengths = _pad_batch(tokens, idx)
        logits, _ = net.model_forward(stacked, params, task, lengths=lengths)
        value, _ = net.loss(logits, targets[idx], task)
        total_loss += value * len(idx)
        if task == "classify":
            correct += int(np.sum(np.argmax(logits, axis=1) == targets[idx]))
        else:
            sq_err += float(np.sum((logits - targets[idx]) ** 2))
    mean_loss = total_loss / n
    if task == "classify":
        return mean_loss, correct / n
    k = targets.shape[1] if targets.ndim > 1 else 1
    return mean_loss, float(np.sqrt(sq_err / (n * k)))


def _train_tokens_for_epoch(dataset, pipeline, config, epoch, cache):
    """Training tokens for one epoch; recomputed when online, cached offline."""
    if config.feature_mode == "offline":
        return cache
    keep = 1.0 - config.drop_prob
    tokens = []
    for idx in dataset.splits["train"]:
        sample = dataset.samples[idx]
        if config.drop_prob > 0:
            sample = random_drop(sample, keep, seed=[config.seed, _DROP_TAG, epoch, idx])
        tokens.append(pipeline.tokenize(sample))
    return tokens


def train(dataset: Dataset, config: TrainConfig, epoch_callback=None) -> TrainResult:
    """Full training run; returns final parameters and per-epoch records.

    Gradients for a mini-batch average over its samples; ragged batches (raw
    tokens under drops) are zero-padded and masked, which reproduces each
    sample's stand-alone forward exactly.  Batch reductions are single
    deterministic matmuls over the stacked samples, so runs are
    bit-reproducible within one build.  A non-finite loss aborts the run and
    restores the last completed epoch's parameters.
    ``epoch_callback(epoch, params, record)``, when given, runs after each
    epoch outside the timed section.
    """
    with _single_thread_blas():
        return _train_impl(dataset, config, epoch_callback)


def _train_impl(dataset: Dataset, config: TrainConfig, epoch_callback=None) -> TrainResult:
    task = dataset.task
    pipeline = TokenPipeline.build(dataset, config)

    train_idx = dataset.splits["train"]
    if not train_idx or not dataset.splits["val"]:
        raise ValueError("training needs nonempty train and val splits")
    val_tokens = [pipeline.tokenize(dataset.samples[i]) for i in dataset.splits["val"]]
    offline_tokens = None
    if config.feature_mode == "offline":
        offline_tokens = [pipeline.tokenize(dataset.samples[i]) for i in train_idx]

    sample_tokens = offline_tokens or [pipeline.tokenize(dataset.samples[train_idx[0]])]
    input_dim = sample_tokens[0].shape[1]
    max_len = max(s.num_points for s in dataset.samples)
    if config.token_mode == "signature":
        max_len = config.features.num_windows
    params = net.init_model_params(
        input_dim, dataset.num_outputs, max_len, config.model, seed=config.seed
    )
    state = init_adam_state(params)
    train_targets = dataset.targets("train")
    val_targets = dataset.targets("val")

    records: list[EpochRecord] = []
    snapshot = params.copy()
    diverged = False
    best_metric = None
    stale_epochs = 0

    for epoch in range(config.epochs):
        tic = time.perf_counter()
        tokens = _train_tokens_for_epoch(dataset, pipeline, config, epoch, offline_tokens)
        order = np.random.default_rng([config.seed, _SHUFFLE_TAG, epoch]).permutation(
            len(tokens)
        )
        epoch_loss = 0.0
        bad = False
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            stacked, lengths = _pad_batch(tokens, batch)
            try:
                value, dlogits, cache, _ = _forward_loss(
                    stacked, train_targets[batch], params, task, lengths
                )
            except FloatingPointError:
                bad = True
                break
            if not np.isfinite(value):
                bad = True
                break
            grads = net.model_backward(params, cache, dlogits)
            adam_step(
                params,
                grads,
                state,
                config.learning_rate,
                (config.beta1, config.beta2),
                config.adam_eps,
            )
            epoch_loss += value * len(batch)
        seconds = time.perf_counter() - tic

        if bad:
            params = snapshot
            diverged = True
            break
        snapshot = params.copy()

        val_loss, val_metric = _eval_tokens(
            val_tokens, val_targets, params, task, config.batch_size
        )
        records.append(
            EpochRecord(epoch, epoch_loss / len(tokens), val_loss, val_metric, seconds)
        )
        if epoch_callback is not None:
            epoch_callback(epoch, params, records[-1])

        if config.patience is not None:
            better = best_metric is None or (
                val_metric > best_metric if task == "classify" else val_metric < best_metric
            )
            if better:
                best_metric = val_metric
                stale_epochs = 0
            else:
                stale_epochs += 1
                if stale_epochs > config.patience:
                    break

    return TrainResult(params, records, pipeline, diverged)


def evaluate(
    dataset: Dataset,
    params: net.ModelParams,
    config: TrainConfig,
    split: str = "test",
    pipeline: TokenPipeline | None = None,
    drop_prob: float = 0.0,
    drop_seed: int = 0,
) -> dict:
    """Metric report on one split, optionally after a seeded random drop.

    Classification reports accuracy and mean cross-entropy, regression the
    root-mean-square error.  Without an explicit pipeline the token recipe is
    rebuilt from the dataset and config, which reproduces training exactly.
    """
    if pipeline is None:
        pipeline = TokenPipeline.build(dataset, config)
    task = dataset.task
    tokens = []
    for idx in dataset.splits[split]:
        sample = dataset.samples[idx]
        if drop_prob > 0:
            sample = random_drop(
                sample, 1.0 - drop_prob, seed=[drop_seed, _EVAL_DROP_TAG, idx]
            )
        tokens.append(pipeline.tokenize(sample))
    targets = dataset.targets(split)
    with _single_thread_blas():
        mean_loss, metric = _eval_tokens(tokens, targets, params, task, config.batch_size)
    report = {"split": split, "count": len(tokens), "drop_prob": drop_prob}
    if task == "classify":
        report.update({"accuracy": metric, "mean_ce": mean_loss})
    else:
        report.update({"rmse": metric, "mean_mse": mean_loss})
    return report


@dataclass
class BenchRecord:
    length: int
    transform_seconds: float
    offline_epoch_seconds: float
    online_epoch_seconds: float
    attention_ops_per_epoch: int

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "transform_seconds": self.transform_seconds,
            "offline_epoch_seconds": self.offline_epoch_seconds,
            "online_epoch_seconds": self.online_epoch_seconds,
            "attention_ops_per_epoch": self.attention_ops_per_epoch,
        }


def bench_epoch_time(
    lengths,
    config: TrainConfig,
    num_classes: int = 4,
    samples_per_class: int = 12,
    epochs: int = 5,
    warmup: int = 1,
) -> list[BenchRecord]:
    """Seconds per epoch across input lengths, offline versus online.

    For each length a fresh frequency-classification dataset is generated;
    the one-off transform is timed separately, epoch timings are means over
    ``epochs`` measured epochs after ``warmup`` discarded ones.  Attention
    work is reported from the instrumented multiply-add counter, which must
    not depend on the input length when the window count is fixed.
    """
    results = []
    for length in lengths:
        dataset = gen_sinusoidal(
            num_classes, samples_per_class, int(length), seed=config.seed
        )
        run_cfg = replace(
            config, epochs=warmup + epochs, drop_prob=0.0, feature_mode="offline"
        )

        pipeline = TokenPipeline.build(dataset, run_cfg)
        tic = time.perf_counter()
        for idx in dataset.splits["train"]:
            pipeline.tokenize(dataset.samples[idx])
        transform_seconds = time.perf_counter() - tic

        net.reset_attention_ops()
        offline = train(dataset, run_cfg)
        ops_per_epoch = net.attention_ops() // (warmup + epochs)
        offline_spe = float(np.mean([r.seconds for r in offline.records[warmup:]]))

        online = train(dataset, replace(run_cfg, feature_mode="online"))
        online_spe = float(np.mean([r.seconds for r in online.records[warmup:]]))

        results.append(
            BenchRecord(
                int(length), transform_seconds, offline_spe, online_spe, ops_per_epoch
            )
        )
    return results
