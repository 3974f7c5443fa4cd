"""Encoder-decoder transformer built on the tape autodiff core.

Architecture: token embeddings scaled by sqrt(d_model) plus sinusoidal
positional encoding; per layer, multi-head attention and a position-wise
ReLU FFN, each wrapped post-norm as layer_norm(x + dropout(sublayer(x)));
the decoder adds masked self-attention and cross-attention over encoder
output; a final linear projection produces vocabulary logits (softmax is
owned by the loss and the greedy decoder).

Encoder and decoder widths default to the shared config but can be
overridden per stack; cross-attention key/value projections bridge the
two widths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError, ShapeMismatch
from .tensor import Tensor
from .text import PAD_ID

MASK_BIAS = -1e30  # -inf equivalent: exp underflows to exactly 0 after the max shift


@dataclass(frozen=True)
class StackOverride:
    """Optional per-stack deviations from the shared transformer defaults."""

    d_model: Optional[int] = None
    num_heads: Optional[int] = None
    dropout: Optional[float] = None


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    max_encoder_len: int
    max_decoder_len: int
    num_layers: int = 2
    d_model: int = 256
    ffn_units: int = 512
    num_heads: int = 8
    dropout: float = 0.1
    encoder: Optional[StackOverride] = None
    decoder: Optional[StackOverride] = None

    def __post_init__(self):
        for name in ("vocab_size", "max_encoder_len", "max_decoder_len",
                     "num_layers", "d_model", "ffn_units", "num_heads"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for stack in ("encoder", "decoder"):
            d, h, p = self.resolve(stack)
            if d % h != 0:
                raise ConfigError(
                    f"{stack} d_model {d} not divisible by num_heads {h}"
                )
            if d % 2 != 0:
                raise ConfigError(f"{stack} d_model {d} must be even for positional encoding")
            if not 0.0 <= p < 1.0:
                raise ConfigError(f"{stack} dropout {p} outside [0, 1)")

    def resolve(self, stack: str) -> tuple[int, int, float]:
        """(d_model, num_heads, dropout) effective for 'encoder' or 'decoder'."""
        override = getattr(self, stack)
        if override is None:
            return self.d_model, self.num_heads, self.dropout
        return (
            override.d_model if override.d_model is not None else self.d_model,
            override.num_heads if override.num_heads is not None else self.num_heads,
            override.dropout if override.dropout is not None else self.dropout,
        )

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, payload: dict) -> "TransformerConfig":
        payload = dict(payload)
        for stack in ("encoder", "decoder"):
            if payload.get(stack) is not None:
                payload[stack] = StackOverride(**payload[stack])
        return cls(**payload)


def narrow_config(
    vocab_size: int, max_encoder_len: int, max_decoder_len: int
) -> TransformerConfig:
    """Variant with narrower per-stack widths: d_model 128, 4 heads, dropout 0.3."""
    override = StackOverride(d_model=128, num_heads=4, dropout=0.3)
    return TransformerConfig(
        vocab_size=vocab_size,
        max_encoder_len=max_encoder_len,
        max_decoder_len=max_decoder_len,
        encoder=override,
        decoder=override,
    )


def positional_encoding(max_len: int, d_model: int) -> Tensor:
    """Fixed sinusoidal position signal: sin on even dims, cos on odd dims.

    PE(pos, 2i)   = sin(pos / 10000^(2i / d_model))
    PE(pos, 2i+1) = cos(pos / 10000^(2i / d_model))
    """
    if d_model % 2 != 0:
        raise ConfigError(f"positional encoding needs an even width, got {d_model}")
    positions = np.arange(max_len, dtype=np.float64)[:, None]
    dims = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, dims / d_model)
    table = np.empty((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return Tensor(table)


def causal_mask(n: int) -> np.ndarray:
    """Boolean [n, n] mask: position (i, j) allowed iff j <= i."""
    if n < 1:
        raise ContractError(f"causal mask size must be >= 1, got {n}")
    return np.tril(np.ones((n, n), dtype=bool))


def padding_mask(ids: np.ndarray) -> np.ndarray:
    """Boolean [batch, n] key mask: True where the token is not PAD."""
    return np.asarray(ids) != PAD_ID


def mask_to_bias(mask: np.ndarray, shape: tuple) -> np.ndarray:
    """Expand an allowed-position mask to an additive score bias."""
    allowed = np.broadcast_to(mask, shape)
    return np.where(allowed, 0.0, MASK_BIAS)


def scaled_dot_product_attention(
    q: Tensor, k: Tensor, v: Tensor, mask: Optional[np.ndarray] = None
) -> tuple[Tensor, Tensor]:
    """softmax(q k^T / sqrt(d_k) + mask bias) v.

    q: [..., n_q, d_k], k: [..., n_k, d_k], v: [..., n_k, d_v]; mask is a
    boolean allowed-position array broadcastable to [..., n_q, n_k].
    Returns (output [..., n_q, d_v], weights [..., n_q, n_k]).
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeMismatch(f"query/key widths differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeMismatch(f"key/value counts differ: {k.shape} vs {v.shape}")
    d_k = q.shape[-1]
    scores = T.scale(
        T.matmul(q, T.transpose(k, _swap_last(k.data.ndim))), 1.0 / math.sqrt(d_k)
    )
    if mask is not None:
        scores = T.add(scores, Tensor(mask_to_bias(mask, scores.shape)))
    weights = T.softmax(scores, axis=-1)
    return T.matmul(weights, v), weights


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def split_heads(x: Tensor, num_heads: int) -> Tensor:
    """[batch, n, d_model] -> [batch, heads, n, d_model/heads]."""
    batch, n, d = x.shape
    if d % num_heads != 0:
        raise ConfigError(f"width {d} not divisible by {num_heads} heads")
    x = T.reshape(x, (batch, n, num_heads, d // num_heads))
    return T.transpose(x, (0, 2, 1, 3))


def merge_heads(x: Tensor) -> Tensor:
    """[batch, heads, n, d_head] -> [batch, n, heads*d_head]."""
    batch, heads, n, d_head = x.shape
    x = T.transpose(x, (0, 2, 1, 3))
    return T.reshape(x, (batch, n, heads * d_head))


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor,
    w_q: Tensor,
    w_k: Tensor,
    w_v: Tensor,
    w_o: Tensor,
    num_heads: int,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """Parallel attention over learned subspace projections.

    Projects queries/keys/values to num_heads subspaces of width
    d_model/num_heads, attends per head, concatenates, and applies w_o.
    """
    q = split_heads(T.matmul(x_q, w_q), num_heads)
    k = split_heads(T.matmul(x_kv, w_k), num_heads)
    v = split_heads(T.matmul(x_kv, w_v), num_heads)
    attended, _ = scaled_dot_product_attention(q, k, v, mask)
    return T.matmul(merge_heads(attended), w_o)


def parameter_count(config: TransformerConfig) -> int:
    """Closed-form parameter total as a pure function of the config."""
    v = config.vocab_size
    d_e, _, _ = config.resolve("encoder")
    d_d, _, _ = config.resolve("decoder")
    f = config.ffn_units
    embeddings = v * d_e + v * d_d
    enc_layer = 4 * d_e * d_e + (d_e * f + f + f * d_e + d_e) + 2 * 2 * d_e
    dec_layer = (
        4 * d_d * d_d                       # self-attention
        + 2 * d_d * d_d + 2 * d_e * d_d     # cross-attention (w_q, w_o | w_k, w_v)
        + (d_d * f + f + f * d_d + d_d)     # feed-forward
        + 3 * 2 * d_d                       # three layer norms
    )
    out_proj = d_d * v + v
    return embeddings + config.num_layers * (enc_layer + dec_layer) + out_proj


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_transformer_params(config: TransformerConfig, seed: int) -> dict[str, Tensor]:
    """Seeded uniform(+-1/sqrt(fan_in)) weights; layer-norm gain 1, bias 0."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7F0]))
    d_e, _, _ = config.resolve("encoder")
    d_d, _, _ = config.resolve("decoder")
    f = config.ffn_units
    v = config.vocab_size
    params: dict[str, np.ndarray] = {}
    params["enc_embed"] = _uniform(rng, d_e, (v, d_e))
    params["dec_embed"] = _uniform(rng, d_d, (v, d_d))
    for i in range(config.num_layers):
        p = f"enc.{i}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.attn.{name}"] = _uniform(rng, d_e, (d_e, d_e))
        params[f"{p}.ffn.w1"] = _uniform(rng, d_e, (d_e, f))
        params[f"{p}.ffn.b1"] = np.zeros(f)
        params[f"{p}.ffn.w2"] = _uniform(rng, f, (f, d_e))
        params[f"{p}.ffn.b2"] = np.zeros(d_e)
        for ln in ("ln1", "ln2"):
            params[f"{p}.{ln}.gain"] = np.ones(d_e)
            params[f"{p}.{ln}.bias"] = np.zeros(d_e)
    for i in range(config.num_layers):
        p = f"dec.{i}"
        for name in ("wq", "wk", "wv", "wo"):
            params[f"{p}.self.{name}"] = _uniform(rng, d_d, (d_d, d_d))
        params[f"{p}.cross.wq"] = _uniform(rng, d_d, (d_d, d_d))
        params[f"{p}.cross.wk"] = _uniform(rng, d_e, (d_e, d_d))
        params[f"{p}.cross.wv"] = _uniform(rng, d_e, (d_e, d_d))
        params[f"{p}.cross.wo"] = _uniform(rng, d_d, (d_d, d_d))
        params[f"{p}.ffn.w1"] = _uniform(rng, d_d, (d_d, f))
        params[f"{p}.ffn.b1"] = np.zeros(f)
        params[f"{p}.ffn.w2"] = _uniform(rng, f, (f, d_d))
        params[f"{p}.ffn.b2"] = np.zeros(d_d)
        for ln in ("ln1", "ln2", "ln3"):
            params[f"{p}.{ln}.gain"] = np.ones(d_d)
            params[f"{p}.{ln}.bias"] = np.zeros(d_d)
    params["out.w"] = _uniform(rng, d_d, (d_d, v))
    params["out.b"] = np.zeros(v)
    return {name: Tensor(data, requires_grad=True) for name, data in params.items()}


class TransformerModel:
    """Full encoder-decoder stack over a shared vocabulary."""

    family = "transformer"

    def __init__(
        self,
        config: TransformerConfig,
        seed: int = 0,
        params: Optional[dict[str, Tensor]] = None,
    ):
        self.config = config
        self.params = params if params is not None else init_transformer_params(config, seed)
        d_e, _, _ = config.resolve("encoder")
        d_d, _, _ = config.resolve("decoder")
        self._pe_enc = positional_encoding(config.max_encoder_len, d_e)
        self._pe_dec = positional_encoding(config.max_decoder_len, d_d)

    def _sublayer(self, x: Tensor, out: Tensor, prefix: str, ln: str,
                  dropout_p: float, rng) -> Tensor:
        p = self.params
        wrapped = T.add(x, T.dropout(out, dropout_p, rng))
        return T.layer_norm(wrapped, p[f"{prefix}.{ln}.gain"], p[f"{prefix}.{ln}.bias"])

    def _embed(self, ids: np.ndarray, table: Tensor, pe: Tensor, d: int,
               dropout_p: float, rng) -> Tensor:
        n = ids.shape[1]
        scaled = T.scale(T.embedding(table, ids), math.sqrt(d))
        x = T.add(scaled, Tensor(pe.data[:n]))
        return T.dropout(x, dropout_p, rng)

    def encoder_forward(
        self, src_ids: np.ndarray, rng=None, src_key_mask: Optional[np.ndarray] = None
    ) -> Tensor:
        src_ids = np.asarray(src_ids)
        cfg = self.config
        if src_ids.shape[1] > cfg.max_encoder_len:
            raise ContractError(
                f"encoder input length {src_ids.shape[1]} exceeds limit {cfg.max_encoder_len}"
            )
        d, heads, drop = cfg.resolve("encoder")
        p = self.params
        batch, n = src_ids.shape
        if src_key_mask is None:
            src_key_mask = padding_mask(src_ids)
        mask = np.broadcast_to(src_key_mask[:, None, None, :], (batch, heads, n, n))
        x = self._embed(src_ids, p["enc_embed"], self._pe_enc, d, drop, rng)
        for i in range(cfg.num_layers):
            prefix = f"enc.{i}"
            attended = multi_head_attention(
                x, x,
                p[f"{prefix}.attn.wq"], p[f"{prefix}.attn.wk"],
                p[f"{prefix}.attn.wv"], p[f"{prefix}.attn.wo"],
                heads, mask,
            )
            x = self._sublayer(x, attended, prefix, "ln1", drop, rng)
            x = self._sublayer(x, self._ffn(x, prefix), prefix, "ln2", drop, rng)
        return x

    def _ffn(self, x: Tensor, prefix: str) -> Tensor:
        p = self.params
        hidden = T.relu(T.add(T.matmul(x, p[f"{prefix}.ffn.w1"]), p[f"{prefix}.ffn.b1"]))
        return T.add(T.matmul(hidden, p[f"{prefix}.ffn.w2"]), p[f"{prefix}.ffn.b2"])

    def decoder_forward(
        self,
        dec_ids: np.ndarray,
        enc_out: Tensor,
        src_ids: np.ndarray,
        rng=None,
        src_key_mask: Optional[np.ndarray] = None,
        dec_key_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        dec_ids = np.asarray(dec_ids)
        src_ids = np.asarray(src_ids)
        cfg = self.config
        if dec_ids.shape[1] > cfg.max_decoder_len:
            raise ContractError(
                f"decoder input length {dec_ids.shape[1]} exceeds limit {cfg.max_decoder_len}"
            )
        d, heads, drop = cfg.resolve("decoder")
        p = self.params
        batch, n = dec_ids.shape
        n_src = src_ids.shape[1]
        if src_key_mask is None:
            src_key_mask = padding_mask(src_ids)
        if dec_key_mask is None:
            dec_key_mask = padding_mask(dec_ids)
        # self-attention: causal AND key-padding; cross-attention: source padding
        self_allowed = causal_mask(n)[None, None, :, :] & dec_key_mask[:, None, None, :]
        self_mask = np.broadcast_to(self_allowed, (batch, heads, n, n))
        cross_mask = np.broadcast_to(src_key_mask[:, None, None, :], (batch, heads, n, n_src))
        x = self._embed(dec_ids, p["dec_embed"], self._pe_dec, d, drop, rng)
        for i in range(cfg.num_layers):
            prefix = f"dec.{i}"
            self_att = multi_head_attention(
                x, x,
                p[f"{prefix}.self.wq"], p[f"{prefix}.self.wk"],
                p[f"{prefix}.self.wv"], p[f"{prefix}.self.wo"],
                heads, self_mask,
            )
            x = self._sublayer(x, self_att, prefix, "ln1", drop, rng)
            cross_att = multi_head_attention(
                x, enc_out,
                p[f"{prefix}.cross.wq"], p[f"{prefix}.cross.wk"],
                p[f"{prefix}.cross.wv"], p[f"{prefix}.cross.wo"],
                heads, cross_mask,
            )
            x = self._sublayer(x, cross_att, prefix, "ln2", drop, rng)
            x = self._sublayer(x, self._ffn(x, prefix), prefix, "ln3", drop, rng)
        return T.add(T.matmul(x, p["out.w"]), p["out.b"])

    def forward(
        self,
        src_ids: np.ndarray,
        dec_ids: np.ndarray,
        rng=None,
        src_key_mask: Optional[np.ndarray] = None,
        dec_key_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        """Teacher-forced logits [batch, n_dec, vocab_size]."""
        enc_out = self.encoder_forward(src_ids, rng, src_key_mask)
        return self.decoder_forward(
            dec_ids, enc_out, src_ids, rng, src_key_mask, dec_key_mask
        )
