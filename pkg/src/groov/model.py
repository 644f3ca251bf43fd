"""A small trainable encoder-decoder sequence scorer with hand-written gradients.

The network is a pre-norm transformer: token embeddings shared between
encoder and decoder (scaled by sqrt(d)), sinusoidal positions, multi-head
attention, GELU feed-forward blocks, and a final projection to the 260-token
vocabulary.  Parameters are stored as float32 (the checkpoint format is
little-endian float32 blocks).  Activation/gradient arithmetic runs in a
selectable dtype: float64 by default, which is what the finite-difference
gradient checks rely on; the training loop uses the float32 path.  There is
no framework dependency: the backward pass walks the cached forward
intermediates explicitly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .tokenizer import SPECIAL_TOKENS, VOCAB_SIZE, TokenSeq

_LN_EPS = 1e-5
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_K = 0.044715

CHECKPOINT_MAGIC = b"GROOVCKPT"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """A checkpoint file is corrupt, truncated, or has the wrong version."""


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 64
    layers: int = 2
    heads: int = 2
    ffn_dim: int = 128
    max_input_len: int = 512
    max_output_len: int = 128
    vocab_size: int = VOCAB_SIZE
    dropout_rate: float = 0.0

    def __post_init__(self) -> None:
        for name in ("embed_dim", "layers", "heads", "ffn_dim", "max_input_len", "max_output_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim % self.heads != 0:
            raise ValueError("embed_dim must be divisible by heads")
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size is fixed at {VOCAB_SIZE}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    step_count: int = 0
    _mirrors: dict = field(default_factory=dict, repr=False, compare=False)
    _pos_enc: dict = field(default_factory=dict, repr=False, compare=False)
    _masks: dict = field(default_factory=dict, repr=False, compare=False)

    def mirror(self, dtype=np.float64) -> dict[str, np.ndarray]:
        """Parameters cast to the compute dtype, rebuilt after updates."""
        key = np.dtype(dtype).name
        cached = self._mirrors.get(key)
        if cached is None:
            cached = {k: v.astype(dtype) for k, v in self.params.items()}
            self._mirrors[key] = cached
        return cached

    def p64(self) -> dict[str, np.ndarray]:
        return self.mirror(np.float64)

    def invalidate(self) -> None:
        self._mirrors.clear()

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def positions(self, length: int, dtype=np.float64) -> np.ndarray:
        key = (length, np.dtype(dtype).name)
        table = self._pos_enc.get(key)
        if table is None:
            table = _sinusoidal_positions(length, self.config.embed_dim).astype(dtype)
            self._pos_enc[key] = table
        return table

    def causal_mask(self, tq: int, tk: int, dtype=np.float64) -> np.ndarray:
        key = (tq, tk, np.dtype(dtype).name)
        mask = self._masks.get(key)
        if mask is None:
            mask = np.triu(np.full((tq, tk), -1e30, dtype=dtype), k=1)
            self._masks[key] = mask
        return mask


@dataclass
class OptimizerState:
    first_moment: dict[str, np.ndarray]
    second_moment: dict[str, np.ndarray]
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_model(cls, model: Model, learning_rate: float = 1e-4, weight_decay: float = 0.01) -> "OptimizerState":
        zeros = lambda: {k: np.zeros_like(v) for k, v in model.params.items()}
        return cls(first_moment=zeros(), second_moment=zeros(),
                   learning_rate=learning_rate, weight_decay=weight_decay)


def _sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    div = np.exp(np.arange(0, dim, 2, dtype=np.float64) * (-np.log(10000.0) / dim))
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * div)
    table[:, 1::2] = np.cos(pos * div[: table[:, 1::2].shape[1]])
    return table


def _param_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """(name, shape, init kind) for every parameter, in a fixed order."""
    d, f, v = config.embed_dim, config.ffn_dim, config.vocab_size
    shapes: list[tuple[str, tuple[int, ...], str]] = [("tok_embed", (v, d), "embed")]

    def attn(prefix: str) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            shapes.append((f"{prefix}.{w}", (d, d), "linear"))
        for b in ("bq", "bk", "bv", "bo"):
            shapes.append((f"{prefix}.{b}", (d,), "zero"))

    def ln(prefix: str) -> None:
        shapes.append((f"{prefix}.g", (d,), "one"))
        shapes.append((f"{prefix}.b", (d,), "zero"))

    def ffn(prefix: str) -> None:
        shapes.append((f"{prefix}.w1", (d, f), "linear"))
        shapes.append((f"{prefix}.b1", (f,), "zero"))
        shapes.append((f"{prefix}.w2", (f, d), "linear"))
        shapes.append((f"{prefix}.b2", (d,), "zero"))

    for i in range(config.layers):
        ln(f"enc.{i}.ln1")
        attn(f"enc.{i}.attn")
        ln(f"enc.{i}.ln2")
        ffn(f"enc.{i}.ffn")
    ln("enc.ln_f")
    for i in range(config.layers):
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.self")
        ln(f"dec.{i}.ln2")
        attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln3")
        ffn(f"dec.{i}.ffn")
    ln("dec.ln_f")
    shapes.append(("out.w", (d, v), "linear"))
    shapes.append(("out.b", (v,), "zero"))
    return shapes


def init_model(config: ModelConfig, seed: int) -> Model:
    """Initialize parameters with scaled-uniform draws, deterministic under seed."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape, kind in _param_shapes(config):
        if kind == "zero":
            arr = np.zeros(shape, dtype=np.float32)
        elif kind == "one":
            arr = np.ones(shape, dtype=np.float32)
        elif kind == "embed":
            scale = 1.0 / np.sqrt(shape[1])
            arr = rng.uniform(-scale, scale, size=shape).astype(np.float32)
        else:  # linear: fan_in is the first axis
            scale = 1.0 / np.sqrt(shape[0])
            arr = rng.uniform(-scale, scale, size=shape).astype(np.float32)
        params[name] = arr
    return Model(config=config, params=params)


# ---------------------------------------------------------------------------
# forward / backward primitives (dtype follows the caller's arrays)
# ---------------------------------------------------------------------------


def _ln_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _ln_bwd(dy, g, cache):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    gdy = dy * g
    dx = inv * (gdy - gdy.mean(axis=-1, keepdims=True)
                - xhat * (gdy * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _heads(x, n_heads):
    t, d = x.shape
    return x.reshape(t, n_heads, d // n_heads).transpose(1, 0, 2)


def _unheads(x):
    h, t, dh = x.shape
    return x.transpose(1, 0, 2).reshape(t, h * dh)


def _attn_fwd(q_in, kv_in, p, prefix, n_heads, mask=None):
    q = q_in @ p[f"{prefix}.wq"] + p[f"{prefix}.bq"]
    k = kv_in @ p[f"{prefix}.wk"] + p[f"{prefix}.bk"]
    v = kv_in @ p[f"{prefix}.wv"] + p[f"{prefix}.bv"]
    qh, kh, vh = _heads(q, n_heads), _heads(k, n_heads), _heads(v, n_heads)
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = qh @ kh.transpose(0, 2, 1) * scale  # (H, Tq, Tk)
    if mask is not None:
        scores = scores + mask
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    ctx = _unheads(weights @ vh)  # (Tq, D)
    out = ctx @ p[f"{prefix}.wo"] + p[f"{prefix}.bo"]
    cache = (q_in, kv_in, qh, kh, vh, weights, ctx, scale)
    return out, cache


def _attn_bwd(dout, p, prefix, n_heads, cache, grads):
    q_in, kv_in, qh, kh, vh, weights, ctx, scale = cache
    grads[f"{prefix}.wo"] += ctx.T @ dout
    grads[f"{prefix}.bo"] += dout.sum(axis=0)
    dctx = _heads(dout @ p[f"{prefix}.wo"].T, n_heads)
    dweights = dctx @ vh.transpose(0, 2, 1)
    dvh = weights.transpose(0, 2, 1) @ dctx
    dscores = weights * (dweights - (dweights * weights).sum(axis=-1, keepdims=True))
    dscores *= scale
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 2, 1) @ qh
    dq, dk, dv = _unheads(dqh), _unheads(dkh), _unheads(dvh)
    grads[f"{prefix}.wq"] += q_in.T @ dq
    grads[f"{prefix}.bq"] += dq.sum(axis=0)
    grads[f"{prefix}.wk"] += kv_in.T @ dk
    grads[f"{prefix}.bk"] += dk.sum(axis=0)
    grads[f"{prefix}.wv"] += kv_in.T @ dv
    grads[f"{prefix}.bv"] += dv.sum(axis=0)
    dq_in = dq @ p[f"{prefix}.wq"].T
    dkv_in = dk @ p[f"{prefix}.wk"].T + dv @ p[f"{prefix}.wv"].T
    return dq_in, dkv_in


def _ffn_fwd(x, p, prefix):
    h = x @ p[f"{prefix}.w1"] + p[f"{prefix}.b1"]
    t = np.tanh(_GELU_C * (h + _GELU_K * h * h * h))
    a = 0.5 * h * (1.0 + t)
    return a @ p[f"{prefix}.w2"] + p[f"{prefix}.b2"], (x, h, t, a)


def _ffn_bwd(dy, p, prefix, cache, grads):
    x, h, t, a = cache
    grads[f"{prefix}.w2"] += a.T @ dy
    grads[f"{prefix}.b2"] += dy.sum(axis=0)
    # GELU derivative reuses the tanh cached by the forward pass
    dgelu = 0.5 * (1.0 + t) + 0.5 * h * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * h * h)
    dh = (dy @ p[f"{prefix}.w2"].T) * dgelu
    grads[f"{prefix}.w1"] += x.T @ dh
    grads[f"{prefix}.b1"] += dh.sum(axis=0)
    return dh @ p[f"{prefix}.w1"].T


def _dropout_mask(shape, rate, rng, dtype):
    keep = 1.0 - rate
    return ((rng.random(shape) < keep) / np.asarray(keep, dtype=dtype)).astype(dtype)


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------


def _check_tokens(ids: TokenSeq, limit: int, what: str) -> np.ndarray:
    arr = np.asarray(ids, dtype=np.int64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a non-empty token sequence")
    if arr.size > limit:
        raise ValueError(f"{what} length {arr.size} exceeds limit {limit}")
    if arr.min() < 0 or arr.max() >= VOCAB_SIZE:
        raise ValueError(f"{what} contains out-of-vocabulary token ids")
    return arr


def _make_dropper(rate, rng, store, dtype):
    def maybe_drop(x):
        if rate <= 0.0 or rng is None:
            store.append(None)
            return x
        mask = _dropout_mask(x.shape, rate, rng, dtype)
        store.append(mask)
        return x * mask

    return maybe_drop


def _encode(model: Model, src: np.ndarray, p, maybe_drop, cache: dict, dtype) -> np.ndarray:
    cfg = model.config
    # embeddings scaled by sqrt(d) so token identity is not drowned out by the
    # unit-scale sinusoidal positions
    scale = dtype(np.sqrt(cfg.embed_dim))
    x = p["tok_embed"][src] * scale + model.positions(cfg.max_input_len + 1, dtype)[: src.size]
    for i in range(cfg.layers):
        lc: dict = {}
        a, lc["ln1"] = _ln_fwd(x, p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"])
        attn_out, lc["attn"] = _attn_fwd(a, a, p, f"enc.{i}.attn", cfg.heads)
        x = x + maybe_drop(attn_out)
        h, lc["ln2"] = _ln_fwd(x, p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"])
        ffn_out, lc["ffn"] = _ffn_fwd(h, p, f"enc.{i}.ffn")
        x = x + maybe_drop(ffn_out)
        cache["enc"].append(lc)
    enc_out, cache["enc_ln_f"] = _ln_fwd(x, p["enc.ln_f.g"], p["enc.ln_f.b"])
    cache["enc_out"] = enc_out
    return enc_out


def _decode(model: Model, enc_out: np.ndarray, tgt: np.ndarray, p, maybe_drop, cache: dict, dtype) -> np.ndarray:
    cfg = model.config
    scale = dtype(np.sqrt(cfg.embed_dim))
    y = p["tok_embed"][tgt] * scale + model.positions(cfg.max_output_len + 1, dtype)[: tgt.size]
    mask = model.causal_mask(tgt.size, tgt.size, dtype)
    for i in range(cfg.layers):
        lc: dict = {}
        a, lc["ln1"] = _ln_fwd(y, p[f"dec.{i}.ln1.g"], p[f"dec.{i}.ln1.b"])
        self_out, lc["self"] = _attn_fwd(a, a, p, f"dec.{i}.self", cfg.heads, mask=mask)
        y = y + maybe_drop(self_out)
        c, lc["ln2"] = _ln_fwd(y, p[f"dec.{i}.ln2.g"], p[f"dec.{i}.ln2.b"])
        cross_out, lc["cross"] = _attn_fwd(c, enc_out, p, f"dec.{i}.cross", cfg.heads)
        y = y + maybe_drop(cross_out)
        h, lc["ln3"] = _ln_fwd(y, p[f"dec.{i}.ln3.g"], p[f"dec.{i}.ln3.b"])
        ffn_out, lc["ffn"] = _ffn_fwd(h, p, f"dec.{i}.ffn")
        y = y + maybe_drop(ffn_out)
        cache["dec"].append(lc)
    dec_out, cache["dec_ln_f"] = _ln_fwd(y, p["dec.ln_f.g"], p["dec.ln_f.b"])
    cache["dec_out"] = dec_out
    return dec_out @ p["out.w"] + p["out.b"]


def forward_with_cache(model: Model, input_ids: TokenSeq, target_prefix: TokenSeq,
                       dropout_rng: np.random.Generator | None = None,
                       dtype=np.float64):
    """Run the network; return (logits, cache) with logits shaped (len(prefix), 260).

    Row t scores the token following ``target_prefix[:t+1]``.  The decoder
    self-attends causally and cross-attends to the full encoded input.
    ``dtype`` selects the activation/gradient precision: float64 is the
    default (and what the finite-difference checks rely on); the training
    loop runs float32.
    """
    cfg = model.config
    src = _check_tokens(input_ids, cfg.max_input_len + 1, "input")
    tgt = _check_tokens(target_prefix, cfg.max_output_len + 1, "target prefix")
    p = model.mirror(dtype)
    cache: dict = {"src": src, "tgt": tgt, "enc": [], "dec": [], "drop": [], "dtype": dtype}
    maybe_drop = _make_dropper(cfg.dropout_rate, dropout_rng, cache["drop"], dtype)
    enc_out = _encode(model, src, p, maybe_drop, cache, dtype)
    logits = _decode(model, enc_out, tgt, p, maybe_drop, cache, dtype)
    return logits, cache


def forward_logits(model: Model, input_ids: TokenSeq, target_prefix: TokenSeq) -> np.ndarray:
    logits, _ = forward_with_cache(model, input_ids, target_prefix)
    return logits


def encode_source(model: Model, input_ids: TokenSeq) -> np.ndarray:
    """Encoder output alone, for decode loops that reuse it across steps."""
    src = _check_tokens(input_ids, model.config.max_input_len + 1, "input")
    cache: dict = {"enc": [], "drop": []}
    maybe_drop = _make_dropper(0.0, None, cache["drop"], np.float64)
    return _encode(model, src, model.p64(), maybe_drop, cache, np.float64)


def decoder_logits(model: Model, enc_out: np.ndarray, target_prefix: TokenSeq) -> np.ndarray:
    """Decoder-only forward against a precomputed encoder output."""
    tgt = _check_tokens(target_prefix, model.config.max_output_len + 1, "target prefix")
    cache: dict = {"dec": [], "drop": []}
    maybe_drop = _make_dropper(0.0, None, cache["drop"], np.float64)
    return _decode(model, enc_out, tgt, model.p64(), maybe_drop, cache, np.float64)


def zero_gradients(model: Model, dtype=np.float64) -> dict[str, np.ndarray]:
    return {k: np.zeros(v.shape, dtype=dtype) for k, v in model.params.items()}


def backward(model: Model, cache: dict, dlogits: np.ndarray,
             grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Accumulate d(loss)/d(params) for the forward pass that produced ``cache``.

    ``dlogits`` is the loss gradient at the logits of that pass.  When
    ``grads`` is given, gradients are added into it (batch accumulation);
    otherwise a fresh zero-initialized dict is used.  Arithmetic runs in the
    dtype the forward pass used.
    """
    cfg = model.config
    dtype = cache["dtype"]
    p = model.mirror(dtype)
    dlogits = np.asarray(dlogits, dtype=dtype)
    if dlogits.shape != (cache["tgt"].size, cfg.vocab_size):
        raise ValueError(
            f"gradient shape {dlogits.shape} does not match logits "
            f"({cache['tgt'].size}, {cfg.vocab_size})"
        )
    if grads is None:
        grads = zero_gradients(model, dtype)
    drop_masks = list(cache["drop"])

    def undrop(dx):
        mask = drop_masks.pop()
        return dx if mask is None else dx * mask

    grads["out.w"] += cache["dec_out"].T @ dlogits
    grads["out.b"] += dlogits.sum(axis=0)
    dy = dlogits @ p["out.w"].T

    dx, dg, db = _ln_bwd(dy, p["dec.ln_f.g"], cache["dec_ln_f"])
    grads["dec.ln_f.g"] += dg
    grads["dec.ln_f.b"] += db
    dy = dx
    d_enc_out = np.zeros_like(cache["enc_out"])
    for i in reversed(range(cfg.layers)):
        lc = cache["dec"][i]
        dffn = _ffn_bwd(undrop(dy), p, f"dec.{i}.ffn", lc["ffn"], grads)
        dh, dg, db = _ln_bwd(dffn, p[f"dec.{i}.ln3.g"], lc["ln3"])
        grads[f"dec.{i}.ln3.g"] += dg
        grads[f"dec.{i}.ln3.b"] += db
        dy = dy + dh
        dq_in, dkv = _attn_bwd(undrop(dy), p, f"dec.{i}.cross", cfg.heads, lc["cross"], grads)
        d_enc_out += dkv
        dc, dg, db = _ln_bwd(dq_in, p[f"dec.{i}.ln2.g"], lc["ln2"])
        grads[f"dec.{i}.ln2.g"] += dg
        grads[f"dec.{i}.ln2.b"] += db
        dy = dy + dc
        dq_in, dkv = _attn_bwd(undrop(dy), p, f"dec.{i}.self", cfg.heads, lc["self"], grads)
        da, dg, db = _ln_bwd(dq_in + dkv, p[f"dec.{i}.ln1.g"], lc["ln1"])
        grads[f"dec.{i}.ln1.g"] += dg
        grads[f"dec.{i}.ln1.b"] += db
        dy = dy + da
    emb_scale = dtype(np.sqrt(cfg.embed_dim))
    np.add.at(grads["tok_embed"], cache["tgt"], dy * emb_scale)

    dx, dg, db = _ln_bwd(d_enc_out, p["enc.ln_f.g"], cache["enc_ln_f"])
    grads["enc.ln_f.g"] += dg
    grads["enc.ln_f.b"] += db
    de = dx
    for i in reversed(range(cfg.layers)):
        lc = cache["enc"][i]
        dffn = _ffn_bwd(undrop(de), p, f"enc.{i}.ffn", lc["ffn"], grads)
        dh, dg, db = _ln_bwd(dffn, p[f"enc.{i}.ln2.g"], lc["ln2"])
        grads[f"enc.{i}.ln2.g"] += dg
        grads[f"enc.{i}.ln2.b"] += db
        de = de + dh
        dq_in, dkv = _attn_bwd(undrop(de), p, f"enc.{i}.attn", cfg.heads, lc["attn"], grads)
        da, dg, db = _ln_bwd(dq_in + dkv, p[f"enc.{i}.ln1.g"], lc["ln1"])
        grads[f"enc.{i}.ln1.g"] += dg
        grads[f"enc.{i}.ln1.b"] += db
        de = de + da
    np.add.at(grads["tok_embed"], cache["src"], de * emb_scale)
    assert not drop_masks
    return grads


def gradient_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        flat = g.ravel()
        total += float(np.dot(flat, flat))
    return float(np.sqrt(total))


def apply_update(model: Model, opt: OptimizerState, grads: dict[str, np.ndarray]) -> float:
    """One decoupled-weight-decay Adam step in float32.  Returns the global
    gradient norm.  A non-finite gradient raises before any state is touched.
    """
    if set(grads) != set(model.params):
        raise ValueError("gradient dict does not cover the parameter set")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
    t = model.step_count + 1
    lr = np.float32(opt.learning_rate)
    b1 = np.float32(opt.beta1)
    b2 = np.float32(opt.beta2)
    eps = np.float32(opt.epsilon)
    wd = np.float32(opt.weight_decay)
    bc1 = np.float32(1.0 - opt.beta1**t)
    bc2 = np.float32(1.0 - opt.beta2**t)
    for name, g in grads.items():
        g32 = np.asarray(g, dtype=np.float32)
        m = opt.first_moment[name]
        v = opt.second_moment[name]
        m *= b1
        m += (np.float32(1) - b1) * g32
        v *= b2
        v += (np.float32(1) - b2) * g32 * g32
        p = model.params[name]
        step = lr * (m / bc1 / (np.sqrt(v / bc2) + eps) + wd * p)
        new_p = p - step
        if not np.all(np.isfinite(new_p)):
            raise ValueError(f"non-finite parameter {name!r} after update")
        model.params[name] = new_p
    model.step_count = t
    model.invalidate()
    return gradient_norm(grads)


def backward_and_update(model: Model, opt: OptimizerState, dlogits: np.ndarray, cache: dict) -> float:
    """Backward through the cached forward pass, then apply one optimizer step."""
    if not np.all(np.isfinite(dlogits)):
        raise ValueError("non-finite loss gradient at logits")
    grads = backward(model, cache, dlogits)
    return apply_update(model, opt, grads)


# ---------------------------------------------------------------------------
# checkpoint persistence
# ---------------------------------------------------------------------------


def _write_block(fh, name: str, arr: np.ndarray) -> None:
    name_b = name.encode("utf-8")
    fh.write(struct.pack("<I", len(name_b)))
    fh.write(name_b)
    fh.write(struct.pack("<I", arr.ndim))
    for dim in arr.shape:
        fh.write(struct.pack("<I", dim))
    data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
    fh.write(struct.pack("<I", len(data)))
    fh.write(data)


def save_checkpoint(model: Model, opt: OptimizerState, path) -> None:
    header = {
        "config": asdict(model.config),
        "special_tokens": dict(SPECIAL_TOKENS),
        "step_count": model.step_count,
        "optimizer": {
            "learning_rate": opt.learning_rate,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "epsilon": opt.epsilon,
            "weight_decay": opt.weight_decay,
        },
    }
    header_b = json.dumps(header, sort_keys=True).encode("utf-8")
    blocks: list[tuple[str, np.ndarray]] = []
    for name in sorted(model.params):
        blocks.append((name, model.params[name]))
        blocks.append((f"opt.m.{name}", opt.first_moment[name]))
        blocks.append((f"opt.v.{name}", opt.second_moment[name]))
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_b)))
        fh.write(header_b)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks:
            _write_block(fh, name, arr)


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def load_checkpoint(path) -> tuple[Model, OptimizerState]:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(CHECKPOINT_MAGIC), "magic")
        if magic != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header"))
        (n_blocks,) = struct.unpack("<I", _read_exact(fh, 4, "block count"))
        blocks: dict[str, np.ndarray] = {}
        for _ in range(n_blocks):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "block name length"))
            name = _read_exact(fh, name_len, "block name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, "block ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(fh, 4, "block dim"))[0] for _ in range(ndim)
            )
            (nbytes,) = struct.unpack("<I", _read_exact(fh, 4, "block size"))
            data = _read_exact(fh, nbytes, f"block {name!r}")
            arr = np.frombuffer(data, dtype="<f4").astype(np.float32)
            expected = int(np.prod(shape, dtype=np.int64)) if shape else 1
            if arr.size != expected:
                raise CheckpointError(f"block {name!r} size mismatch")
            blocks[name] = arr.reshape(shape)

    config = ModelConfig(**header["config"])
    if header["special_tokens"] != dict(SPECIAL_TOKENS):
        raise CheckpointError("checkpoint special-token table does not match this build")
    params: dict[str, np.ndarray] = {}
    first: dict[str, np.ndarray] = {}
    second: dict[str, np.ndarray] = {}
    for name, shape, _ in _param_shapes(config):
        for store, key in ((params, name), (first, f"opt.m.{name}"), (second, f"opt.v.{name}")):
            if key not in blocks:
                raise CheckpointError(f"missing parameter block {key!r}")
            if blocks[key].shape != shape:
                raise CheckpointError(f"block {key!r} has shape {blocks[key].shape}, want {shape}")
            store[name] = blocks[key]
    model = Model(config=config, params=params, step_count=int(header["step_count"]))
    opt_h = header["optimizer"]
    opt = OptimizerState(
        first_moment=first,
        second_moment=second,
        learning_rate=opt_h["learning_rate"],
        beta1=opt_h["beta1"],
        beta2=opt_h["beta2"],
        epsilon=opt_h["epsilon"],
        weight_decay=opt_h["weight_decay"],
    )
    return model, opt
