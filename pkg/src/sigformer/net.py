"""Single-head attention encoder over token rows, with exact gradients.

Forward pipeline: linear embedding, optional fixed sinusoidal positions,
then one or more encoder blocks (softmax attention with residual and layer
norm, GELU feed-forward with residual and layer norm), mean pooling over the
token axis, and a linear head.  The backward pass is hand-derived
reverse-mode; gradients stop at the token matrix, which is treated as a
constant feature input.

Tokens are (length, width) matrices or (batch, length, width) stacks.  The
length**2 score scratch arrays are reused between calls through a small
thread-local pool, so a cached forward is only valid for the immediately
following backward; a later forward invalidates it (backward raises).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field

import numpy as np

from . import _kernels

__all__ = [
    "ModelConfig",
    "BlockParams",
    "ModelParams",
    "init_model_params",
    "sinusoidal_position_table",
    "attention_forward",
    "model_forward",
    "model_backward",
    "loss",
    "reset_attention_ops",
    "attention_ops",
    "save_checkpoint",
    "load_checkpoint",
]

TASKS = ("classify", "regress")

_tls = threading.local()


def _pool() -> dict:
    if not hasattr(_tls, "pool"):
        _tls.pool = {}
        _tls.serial = 0
        _tls.attention_ops = 0
    return _tls.pool


def _scratch(tag: str, shape, dtype) -> np.ndarray:
    """Reusable scratch array; contents are garbage until written."""
    pool = _pool()
    key = (tag, shape, np.dtype(dtype).str)
    buf = pool.get(key)
    if buf is None:
        if sum(b.nbytes for b in pool.values()) > 512 * 1024 * 1024:
            pool.clear()
        buf = np.empty(shape, dtype=dtype)
        pool[key] = buf
    return buf


def _bmm(a, b, out=None):
    """Batched matmul as per-slice 2-D gemms.

    The stacked-matmul gufunc takes a pathologically slow path for some
    float32 shapes on this BLAS; plain 2-D calls into a preallocated output
    are uniformly fast and bit-deterministic.
    """
    if out is None:
        out = np.empty((a.shape[0], a.shape[1], b.shape[2]), dtype=a.dtype)
    for i in range(a.shape[0]):
        np.matmul(a[i], b[i], out=out[i])
    return out


def reset_attention_ops():
    _pool()
    _tls.attention_ops = 0


def attention_ops() -> int:
    """Multiply-add count of score and context matmuls since the last reset."""
    _pool()
    return _tls.attention_ops


@dataclass
class ModelConfig:
    """Architecture knobs; everything downstream of the token matrix."""

    d_model: int = 32
    d_ff: int | None = None
    num_blocks: int = 1
    use_positional: bool = True
    ln_eps: float = 1e-5
    dtype: str = "float64"

    def __post_init__(self):
        if self.d_model < 1 or self.num_blocks < 1:
            raise ValueError("d_model and num_blocks must be positive")
        if self.d_ff is None:
            self.d_ff = 4 * self.d_model
        np.dtype(self.dtype)  # validates

    def to_dict(self) -> dict:
        return {
            "d_model": self.d_model,
            "d_ff": self.d_ff,
            "num_blocks": self.num_blocks,
            "use_positional": self.use_positional,
            "ln_eps": self.ln_eps,
            "dtype": self.dtype,
        }


@dataclass
class BlockParams:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class ModelParams:
    """All trainable tensors plus the fixed positional table."""

    config: ModelConfig
    input_dim: int
    output_dim: int
    embed_w: np.ndarray
    embed_b: np.ndarray
    pos_table: np.ndarray
    blocks: list[BlockParams] = field(default_factory=list)
    head_w: np.ndarray = None
    head_b: np.ndarray = None

    def named_parameters(self):
        """(name, array) pairs for every trainable tensor, in a fixed order."""
        yield "embed_w", self.embed_w
        yield "embed_b", self.embed_b
        for i, blk in enumerate(self.blocks):
            for fname in (
                "wq", "wk", "wv", "wo", "ln1_g", "ln1_b",
                "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
            ):
                yield f"block{i}.{fname}", getattr(blk, fname)
        yield "head_w", self.head_w
        yield "head_b", self.head_b

    def copy(self) -> "ModelParams":
        blocks = [
            BlockParams(**{k: v.copy() for k, v in vars(blk).items()})
            for blk in self.blocks
        ]
        return ModelParams(
            config=self.config,
            input_dim=self.input_dim,
            output_dim=self.output_dim,
            embed_w=self.embed_w.copy(),
            embed_b=self.embed_b.copy(),
            pos_table=self.pos_table.copy(),
            blocks=blocks,
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
        )


def sinusoidal_position_table(length: int, d_model: int, dtype="float64") -> np.ndarray:
    """Fixed sin/cos position encodings, one row per token index."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    idx = np.arange(d_model, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, 2.0 * (idx // 2) / d_model)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(dtype)


def init_model_params(
    input_dim: int, output_dim: int, max_len: int, config: ModelConfig, seed=0
) -> ModelParams:
    """Fan-in scaled uniform init for weights, zeros for biases."""
    rng = np.random.default_rng(seed)
    dt = np.dtype(config.dtype)
    dm, dff = config.d_model, config.d_ff

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dt)

    blocks = []
    for _ in range(config.num_blocks):
        blocks.append(
            BlockParams(
                wq=uniform(dm, (dm, dm)),
                wk=uniform(dm, (dm, dm)),
                wv=uniform(dm, (dm, dm)),
                wo=uniform(dm, (dm, dm)),
                ln1_g=np.ones(dm, dtype=dt),
                ln1_b=np.zeros(dm, dtype=dt),
                w1=uniform(dm, (dm, dff)),
                b1=np.zeros(dff, dtype=dt),
                w2=uniform(dff, (dff, dm)),
                b2=np.zeros(dm, dtype=dt),
                ln2_g=np.ones(dm, dtype=dt),
                ln2_b=np.zeros(dm, dtype=dt),
            )
        )
    return ModelParams(
        config=config,
        input_dim=input_dim,
        output_dim=output_dim,
        embed_w=uniform(input_dim, (input_dim, dm)),
        embed_b=np.zeros(dm, dtype=dt),
        pos_table=sinusoidal_position_table(max_len, dm, dt),
        blocks=blocks,
        head_w=uniform(dm, (dm, output_dim)),
        head_b=np.zeros(output_dim, dtype=dt),
    )


def _layer_norm_forward(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return g * xhat + b, (xhat, inv)


def _layer_norm_backward(dy, g, cache):
    xhat, inv = cache
    width = dy.shape[-1]
    dg = (dy * xhat).reshape(-1, width).sum(axis=0)
    db = dy.reshape(-1, width).sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
    )
    return dx, dg, db


def attention_forward(
    tokens: np.ndarray, blk: BlockParams, slot: int = 0, key_pad=None
):
    """Scaled dot-product attention plus output projection on (B, L, d) tokens.

    Returns the projected context and a cache of intermediates for the
    backward pass.  The softmax scale 1/sqrt(d_model) is folded into the
    query matrix.  The (B, L, L) score array lives in pooled scratch keyed by
    ``slot``, so each encoder block of one forward pass gets its own buffer.
    ``key_pad`` marks padded key positions of a ragged batch (B, L boolean);
    their scores drop to an effective minus infinity before the softmax, so
    results for the real rows match a per-sample computation exactly.
    """
    squeeze = tokens.ndim == 2
    x = tokens[None] if squeeze else tokens
    bsz, length, dm = x.shape
    if blk.wq.shape[0] != dm:
        raise ValueError(f"token width {dm} does not match wq {blk.wq.shape}")
    x2 = x.reshape(bsz * length, dm)
    scale = 1.0 / np.sqrt(dm)
    q = (np.matmul(x2, blk.wq) * scale).reshape(bsz, length, dm)
    # keys kept transposed and contiguous: the length**2 matmuls and their
    # backward only ever stream contiguous data
    kt = np.ascontiguousarray(
        np.matmul(x2, blk.wk).reshape(bsz, length, dm).transpose(0, 2, 1)
    )
    v = np.matmul(x2, blk.wv).reshape(bsz, length, dm)

    scores = _scratch(f"scores{slot}", (bsz, length, length), x.dtype)
    _bmm(q, kt, out=scores)
    if key_pad is not None:
        # finite large-negative keeps exp at exactly zero without inf - inf
        np.copyto(scores, x.dtype.type(-1e30), where=key_pad[:, None, :])
    attn = _kernels.softmax_rows(
        scores.reshape(bsz * length, length), out=scores.reshape(bsz * length, length)
    ).reshape(bsz, length, length)

    ctx = _bmm(attn, v)
    out = np.matmul(ctx.reshape(bsz * length, dm), blk.wo).reshape(bsz, length, dm)
    _tls.attention_ops += 4 * bsz * length * length * dm

    cache = {"x": x, "q": q, "kt": kt, "v": v, "attn": attn, "ctx": ctx, "scale": scale}
    return (out[0] if squeeze else out), cache


def _attention_backward(dout, blk, cache):
    x, q, kt, v = cache["x"], cache["q"], cache["kt"], cache["v"]
    attn, ctx, scale = cache["attn"], cache["ctx"], cache["scale"]
    bsz, length, dm = x.shape
    x2 = x.reshape(bsz * length, dm)
    dout2 = dout.reshape(bsz * length, dm)

    dwo = np.matmul(ctx.reshape(bsz * length, dm).T, dout2)
    dctx = np.matmul(dout2, blk.wo.T).reshape(bsz, length, dm)

    dattn = _scratch("dscores", (bsz, length, length), x.dtype)
    _bmm(dctx, v.transpose(0, 2, 1), out=dattn)
    dscores = _kernels.softmax_backward_rows(
        attn.reshape(bsz * length, length),
        dattn.reshape(bsz * length, length),
        out=dattn.reshape(bsz * length, length),
    ).reshape(bsz, length, length)

    # transposed forms keep the big (L, L) operands streaming contiguously;
    # only the small (d, L) results get copied back to row layout
    dq = _bmm(dscores, kt.transpose(0, 2, 1)) * scale  # scale folded into q
    dk = np.ascontiguousarray(_bmm(q.transpose(0, 2, 1), dscores).transpose(0, 2, 1))
    dv = np.ascontiguousarray(_bmm(dctx.transpose(0, 2, 1), attn).transpose(0, 2, 1))

    dq2 = dq.reshape(bsz * length, dm)
    dk2 = dk.reshape(bsz * length, dm)
    dv2 = dv.reshape(bsz * length, dm)
    grads = {
        "wq": np.matmul(x2.T, dq2),
        "wk": np.matmul(x2.T, dk2),
        "wv": np.matmul(x2.T, dv2),
        "wo": dwo,
    }
    dx = np.matmul(dq2, blk.wq.T)
    dx += np.matmul(dk2, blk.wk.T)
    dx += np.matmul(dv2, blk.wv.T)
    return dx.reshape(bsz, length, dm), grads


def model_forward(
    tokens: np.ndarray, params: ModelParams, task: str = "classify", lengths=None
):
    """Full pipeline from token matrix to output logits.

    ``tokens`` is (L, width) for one sample or (B, L, width) for a batch;
    logits come back with the matching leading shape.  A ragged batch is
    passed zero-padded along the token axis with ``lengths`` giving each
    sample's real row count; padded keys are masked out of the attention and
    the pooling averages only real rows, so each sample's logits equal its
    stand-alone forward.  The returned cache feeds model_backward and is
    invalidated by any later forward call.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    squeeze = tokens.ndim == 2
    x = np.ascontiguousarray(tokens[None] if squeeze else tokens, dtype=params.config.dtype)
    if x.ndim != 3 or x.shape[-1] != params.input_dim:
        raise ValueError(
            f"tokens shape {tokens.shape} does not match input_dim {params.input_dim}"
        )
    bsz, length, _ = x.shape
    cfg = params.config
    dm = cfg.d_model
    _pool()
    _tls.serial += 1

    key_pad = None
    if lengths is not None:
        lengths = np.asarray(lengths, dtype=np.int64)
        if lengths.shape != (bsz,) or np.any(lengths < 1) or np.any(lengths > length):
            raise ValueError(f"bad lengths for token shape {x.shape}")
        if not np.all(lengths == length):
            key_pad = np.arange(length)[None, :] >= lengths[:, None]
        else:
            lengths = None

    h = (
        np.matmul(x.reshape(bsz * length, params.input_dim), params.embed_w)
        + params.embed_b
    ).reshape(bsz, length, dm)
    if cfg.use_positional:
        if length <= params.pos_table.shape[0]:
            pos = params.pos_table[:length]
        else:
            pos = sinusoidal_position_table(length, dm, params.pos_table.dtype)
        h = h + pos[None]

    block_caches = []
    for i, blk in enumerate(params.blocks):
        attn_out, attn_cache = attention_forward(h, blk, slot=i, key_pad=key_pad)
        res1 = h + attn_out
        n1, ln1 = _layer_norm_forward(res1, blk.ln1_g, blk.ln1_b, cfg.ln_eps)
        n12 = n1.reshape(bsz * length, dm)
        f_pre = np.ascontiguousarray(np.matmul(n12, blk.w1) + blk.b1)
        f_act = _kernels.gelu(f_pre)
        f_out = np.matmul(f_act, blk.w2) + blk.b2
        res2 = n1 + f_out.reshape(bsz, length, dm)
        h, ln2 = _layer_norm_forward(res2, blk.ln2_g, blk.ln2_b, cfg.ln_eps)
        block_caches.append(
            {"attn": attn_cache, "ln1": ln1, "n1": n1, "f_pre": f_pre,
             "f_act": f_act, "ln2": ln2}
        )

    if lengths is None:
        pooled = h.mean(axis=1)
    else:
        real = (~key_pad)[:, :, None].astype(h.dtype)
        pooled = (h * real).sum(axis=1) / lengths[:, None]
    logits = np.matmul(pooled, params.head_w) + params.head_b
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError(
            "non-finite logits in model_forward; inputs or parameters diverged"
        )
    cache = {
        "x": x,
        "h_final": h,
        "pooled": pooled,
        "blocks": block_caches,
        "squeeze": squeeze,
        "lengths": lengths,
        "key_pad": key_pad,
        "serial": _tls.serial,
    }
    return (logits[0] if squeeze else logits), cache


def model_backward(params: ModelParams, cache: dict, dlogits: np.ndarray) -> dict:
    """Exact gradients for every trainable tensor given d(loss)/d(logits).

    The cache must come from the immediately preceding model_forward; pooled
    scratch is reused across forwards, so an older cache raises.
    """
    if cache["serial"] != _tls.serial:
        raise ValueError("stale forward cache: another forward ran since this one")
    x = cache["x"]
    bsz, length, _ = x.shape
    cfg = params.config
    dm = cfg.d_model
    dlog = np.asarray(dlogits, dtype=x.dtype)
    if cache["squeeze"] and dlog.ndim == 1:
        dlog = dlog[None]

    grads = {
        "head_w": np.matmul(cache["pooled"].T, dlog),
        "head_b": dlog.sum(axis=0),
    }
    if cache["lengths"] is None:
        dh = np.broadcast_to(
            (np.matmul(dlog, params.head_w.T) / length)[:, None, :], (bsz, length, dm)
        ).copy()
    else:
        dpooled = np.matmul(dlog, params.head_w.T) / cache["lengths"][:, None]
        dh = np.broadcast_to(dpooled[:, None, :], (bsz, length, dm)).copy()
        dh[cache["key_pad"]] = 0.0

    for i in reversed(range(len(params.blocks))):
        blk = params.blocks[i]
        bc = cache["blocks"][i]
        dres2, dg2, db2 = _layer_norm_backward(dh, blk.ln2_g, bc["ln2"])
        dres2_2 = dres2.reshape(bsz * length, dm)
        df_act = np.matmul(dres2_2, blk.w2.T)
        dw2 = np.matmul(bc["f_act"].T, dres2_2)
        df_pre = _kernels.gelu_backward(bc["f_pre"], np.ascontiguousarray(df_act))
        n12 = bc["n1"].reshape(bsz * length, dm)
        dw1 = np.matmul(n12.T, df_pre)
        dn1 = dres2 + np.matmul(df_pre, blk.w1.T).reshape(bsz, length, dm)
        dres1, dg1, db1 = _layer_norm_backward(dn1, blk.ln1_g, bc["ln1"])
        dx_attn, attn_grads = _attention_backward(dres1, blk, bc["attn"])
        dh = dres1 + dx_attn
        grads.update(
            {
                f"block{i}.wq": attn_grads["wq"],
                f"block{i}.wk": attn_grads["wk"],
                f"block{i}.wv": attn_grads["wv"],
                f"block{i}.wo": attn_grads["wo"],
                f"block{i}.ln1_g": dg1,
                f"block{i}.ln1_b": db1,
                f"block{i}.w1": dw1,
                f"block{i}.b1": df_pre.sum(axis=0),
                f"block{i}.w2": dw2,
                f"block{i}.b2": dres2_2.sum(axis=0),
                f"block{i}.ln2_g": dg2,
                f"block{i}.ln2_b": db2,
            }
        )

    dh2 = dh.reshape(bsz * length, dm)
    grads["embed_w"] = np.matmul(x.reshape(bsz * length, params.input_dim).T, dh2)
    grads["embed_b"] = dh2.sum(axis=0)
    return grads


def loss(pred: np.ndarray, target, task: str):
    """Scalar loss and its gradient with respect to ``pred``.

    Classification: mean cross-entropy over the batch, log-sum-exp
    stabilized, integer class targets.  Regression: mean squared error
    averaged over batch and output dimensions.
    """
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    pred = np.asarray(pred)
    squeeze = pred.ndim == 1
    z = pred[None] if squeeze else pred
    bsz, k = z.shape

    if task == "classify":
        t = np.atleast_1d(np.asarray(target, dtype=np.int64))
        if t.shape != (bsz,):
            raise ValueError(f"target shape {t.shape} does not match batch {bsz}")
        if np.any(t < 0) or np.any(t >= k):
            raise ValueError(f"class index out of range [0, {k})")
        m = z.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
        value = float(np.mean(lse - z[np.arange(bsz), t]))
        grad = np.exp(z - m)
        grad /= grad.sum(axis=1, keepdims=True)
        grad[np.arange(bsz), t] -= 1.0
        grad /= bsz
    else:
        t = np.asarray(target, dtype=z.dtype)
        t = t.reshape(z.shape)
        diff = z - t
        value = float(np.mean(diff * diff))
        grad = 2.0 * diff / diff.size

    return value, (grad[0] if squeeze else grad).astype(pred.dtype)


def save_checkpoint(path, params: ModelParams, config_echo: dict | None = None, rng_state=None):
    """Self-describing npz container; float payloads round-trip bit-exactly."""
    arrays = {name: arr for name, arr in params.named_parameters()}
    arrays["pos_table"] = params.pos_table
    meta = {
        "model": params.config.to_dict(),
        "input_dim": params.input_dim,
        "output_dim": params.output_dim,
        "num_blocks": params.config.num_blocks,
        "config_echo": config_echo or {},
        "rng_state": rng_state,
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint: (params, config_echo, rng_state)."""
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["__meta__"]))
        cfg = ModelConfig(**meta["model"])
        blocks = []
        for i in range(meta["num_blocks"]):
            blocks.append(
                BlockParams(
                    **{
                        fname: archive[f"block{i}.{fname}"]
                        for fname in (
                            "wq", "wk", "wv", "wo", "ln1_g", "ln1_b",
                            "w1", "b1", "w2", "b2", "ln2_g", "ln2_b",
                        )
                    }
                )
            )
        params = ModelParams(
            config=cfg,
            input_dim=int(meta["input_dim"]),
            output_dim=int(meta["output_dim"]),
            embed_w=archive["embed_w"],
            embed_b=archive["embed_b"],
            pos_table=archive["pos_table"],
            blocks=blocks,
            head_w=archive["head_w"],
            head_b=archive["head_b"],
        )
    return params, meta["config_echo"], meta["rng_state"]
