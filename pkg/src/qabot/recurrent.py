"""Recurrent seq2seq baselines: vanilla RNN, GRU, and LSTM cells, an
optionally bidirectional encoder, and Luong global dot attention.

The encoder consumes the question; padding positions carry the previous
state through unchanged, so the final state is the state at the last real
token. The decoder is teacher-forced over the answer prefix and projects
(hidden) or (hidden ++ attention context) to vocabulary logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .tensor import Tensor
from .transformer import MASK_BIAS, TransformerConfig, padding_mask

CELL_KINDS = ("rnn", "gru", "lstm")
ATTENTION_KINDS = ("none", "dot")


@dataclass(frozen=True)
class RecurrentConfig:
    vocab_size: int
    max_encoder_len: int
    max_decoder_len: int
    cell_kind: str = "lstm"
    hidden_size: int = 512
    embedding_size: int = 256
    bidirectional_encoder: bool = False
    attention: str = "none"
    dropout: float = 0.1

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ConfigError(f"unknown cell kind {self.cell_kind!r}")
        if self.attention not in ATTENTION_KINDS:
            raise ConfigError(f"unknown attention kind {self.attention!r}")
        for name in ("vocab_size", "max_encoder_len", "max_decoder_len",
                     "hidden_size", "embedding_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout {self.dropout} outside [0, 1)")

    def to_json_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json_dict(cls, payload: dict) -> "RecurrentConfig":
        return cls(**payload)


@dataclass
class DecoderState:
    """Recurrent state carried across decode steps."""

    hidden: Tensor
    cell: Optional[Tensor] = None  # LSTM memory only


def _gate_sizes(kind: str, hidden: int) -> int:
    return {"rnn": 1, "gru": 2, "lstm": 4}[kind] * hidden


def _uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _init_cell(rng, params, prefix, kind, emb, hidden):
    if kind == "gru":
        params[f"{prefix}.w_gates"] = _uniform(rng, emb + hidden, (emb + hidden, 2 * hidden))
        params[f"{prefix}.b_gates"] = np.zeros(2 * hidden)
        params[f"{prefix}.w_cand_x"] = _uniform(rng, emb, (emb, hidden))
        params[f"{prefix}.w_cand_h"] = _uniform(rng, hidden, (hidden, hidden))
        params[f"{prefix}.b_cand"] = np.zeros(hidden)
    else:
        width = _gate_sizes(kind, hidden)
        params[f"{prefix}.w"] = _uniform(rng, emb + hidden, (emb + hidden, width))
        params[f"{prefix}.b"] = np.zeros(width)


def init_recurrent_params(config: RecurrentConfig, seed: int) -> dict[str, Tensor]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7F1]))
    v, e, h = config.vocab_size, config.embedding_size, config.hidden_size
    params: dict[str, np.ndarray] = {}
    params["enc_embed"] = _uniform(rng, e, (v, e))
    params["dec_embed"] = _uniform(rng, e, (v, e))
    _init_cell(rng, params, "enc_cell", config.cell_kind, e, h)
    if config.bidirectional_encoder:
        _init_cell(rng, params, "enc_cell_bwd", config.cell_kind, e, h)
        params["enc_proj_h.w"] = _uniform(rng, 2 * h, (2 * h, h))
        params["enc_proj_h.b"] = np.zeros(h)
        if config.cell_kind == "lstm":
            params["enc_proj_c.w"] = _uniform(rng, 2 * h, (2 * h, h))
            params["enc_proj_c.b"] = np.zeros(h)
    _init_cell(rng, params, "dec_cell", config.cell_kind, e, h)
    feat = 2 * h if config.attention == "dot" else h
    params["out.w"] = _uniform(rng, feat, (feat, v))
    params["out.b"] = np.zeros(v)
    return {name: Tensor(data, requires_grad=True) for name, data in params.items()}


def cell_step(
    kind: str,
    x: Tensor,
    state: DecoderState,
    params: dict[str, Tensor],
    prefix: str,
) -> DecoderState:
    """One recurrence update: vanilla tanh RNN, GRU, or LSTM."""
    if kind == "rnn":
        pre = T.add(T.matmul(T.concat([x, state.hidden]), params[f"{prefix}.w"]),
                    params[f"{prefix}.b"])
        return DecoderState(hidden=T.tanh(pre))
    if kind == "gru":
        h = state.hidden
        hidden = h.shape[-1]
        gates = T.sigmoid(T.add(
            T.matmul(T.concat([x, h]), params[f"{prefix}.w_gates"]),
            params[f"{prefix}.b_gates"],
        ))
        z, r = T.split_last(gates, [hidden, hidden])
        candidate = T.tanh(T.add(
            T.add(T.matmul(x, params[f"{prefix}.w_cand_x"]),
                  T.matmul(T.mul(r, h), params[f"{prefix}.w_cand_h"])),
            params[f"{prefix}.b_cand"],
        ))
        # h' = (1 - z) * h + z * candidate, so z = 1 hands over to the candidate
        new_h = T.add(T.mul(T.affine(z, -1.0, 1.0), h), T.mul(z, candidate))
        return DecoderState(hidden=new_h)
    if kind == "lstm":
        h, c = state.hidden, state.cell
        hidden = h.shape[-1]
        pre = T.add(T.matmul(T.concat([x, h]), params[f"{prefix}.w"]),
                    params[f"{prefix}.b"])
        i_pre, f_pre, g_pre, o_pre = T.split_last(pre, [hidden] * 4)
        i, f, o = T.sigmoid(i_pre), T.sigmoid(f_pre), T.sigmoid(o_pre)
        g = T.tanh(g_pre)
        new_c = T.add(T.mul(f, c), T.mul(i, g))
        new_h = T.mul(o, T.tanh(new_c))
        return DecoderState(hidden=new_h, cell=new_c)
    raise ConfigError(f"unknown cell kind {kind!r}")


def luong_dot_attention(
    decoder_hidden: Tensor,
    encoder_states: Tensor,
    key_mask: Optional[np.ndarray] = None,
) -> tuple[Tensor, Tensor]:
    """Global dot attention: score(h, s_i) = h . s_i over every source position.

    decoder_hidden: [batch, hidden]; encoder_states: [batch, n_src, hidden].
    Returns (context [batch, hidden], weights [batch, n_src]).
    """
    batch, n_src, hidden = encoder_states.shape
    if key_mask is not None:
        key_mask = np.asarray(key_mask, dtype=bool)
        if not key_mask.any(axis=1).all():
            raise ContractError("attention over an all-padding source")
    scores = T.reshape(
        T.matmul(encoder_states, T.reshape(decoder_hidden, (batch, hidden, 1))),
        (batch, n_src),
    )
    if key_mask is not None:
        scores = T.add(scores, Tensor(np.where(key_mask, 0.0, MASK_BIAS)))
    weights = T.softmax(scores, axis=-1)
    context = T.reshape(
        T.matmul(T.reshape(weights, (batch, 1, n_src)), encoder_states),
        (batch, hidden),
    )
    return context, weights


def _carry(new: Tensor, old: Tensor, step_mask: np.ndarray) -> Tensor:
    """new where the step is a real token, old where it is padding."""
    keep = np.broadcast_to(step_mask[:, None].astype(np.float64), new.shape).copy()
    return T.add(T.mul(new, Tensor(keep)), T.mul(old, Tensor(1.0 - keep)))


class Seq2SeqModel:
    """Encoder-decoder over recurrent cells with optional dot attention."""

    family = "recurrent"

    def __init__(
        self,
        config: RecurrentConfig,
        seed: int = 0,
        params: Optional[dict[str, Tensor]] = None,
    ):
        self.config = config
        self.params = params if params is not None else init_recurrent_params(config, seed)

    def _zero_state(self, batch: int) -> DecoderState:
        h = Tensor(np.zeros((batch, self.config.hidden_size)))
        if self.config.cell_kind == "lstm":
            return DecoderState(hidden=h, cell=Tensor(np.zeros((batch, self.config.hidden_size))))
        return DecoderState(hidden=h)

    def _run_direction(
        self, src_ids, key_mask, prefix, reverse, rng
    ) -> tuple[list[Tensor], DecoderState]:
        cfg = self.config
        batch, n = src_ids.shape
        state = self._zero_state(batch)
        states: list[Optional[Tensor]] = [None] * n
        steps = range(n - 1, -1, -1) if reverse else range(n)
        for t in steps:
            x = T.dropout(
                T.embedding(self.params["enc_embed"], src_ids[:, t]), cfg.dropout, rng
            )
            new = cell_step(cfg.cell_kind, x, state, self.params, prefix)
            hidden = _carry(new.hidden, state.hidden, key_mask[:, t])
            cell = (
                _carry(new.cell, state.cell, key_mask[:, t])
                if new.cell is not None
                else None
            )
            state = DecoderState(hidden=hidden, cell=cell)
            states[t] = state.hidden
        return states, state

    def encode(
        self, src_ids: np.ndarray, rng=None, src_key_mask: Optional[np.ndarray] = None
    ) -> tuple[Tensor, DecoderState]:
        """(per-position states [batch, n_src, hidden], decoder initial state)."""
        src_ids = np.asarray(src_ids)
        cfg = self.config
        if src_ids.shape[1] > cfg.max_encoder_len:
            raise ContractError(
                f"encoder input length {src_ids.shape[1]} exceeds limit {cfg.max_encoder_len}"
            )
        if src_key_mask is None:
            src_key_mask = padding_mask(src_ids)
        fwd_states, fwd_final = self._run_direction(
            src_ids, src_key_mask, "enc_cell", False, rng
        )
        if not cfg.bidirectional_encoder:
            return T.stack(fwd_states, axis=1), fwd_final
        bwd_states, bwd_final = self._run_direction(
            src_ids, src_key_mask, "enc_cell_bwd", True, rng
        )
        merged = T.stack(
            [T.concat([f, b]) for f, b in zip(fwd_states, bwd_states)], axis=1
        )
        states = T.add(
            T.matmul(merged, self.params["enc_proj_h.w"]), self.params["enc_proj_h.b"]
        )
        hidden = T.add(
            T.matmul(T.concat([fwd_final.hidden, bwd_final.hidden]),
                     self.params["enc_proj_h.w"]),
            self.params["enc_proj_h.b"],
        )
        cell = None
        if cfg.cell_kind == "lstm":
            cell = T.add(
                T.matmul(T.concat([fwd_final.cell, bwd_final.cell]),
                         self.params["enc_proj_c.w"]),
                self.params["enc_proj_c.b"],
            )
        return states, DecoderState(hidden=hidden, cell=cell)

    def decode_step(
        self,
        state: DecoderState,
        token_ids: np.ndarray,
        enc_states: Tensor,
        src_key_mask: np.ndarray,
        rng=None,
    ) -> tuple[Tensor, DecoderState]:
        """One teacher-forced or greedy step: (logits [batch, vocab], new state)."""
        cfg = self.config
        x = T.dropout(T.embedding(self.params["dec_embed"], token_ids), cfg.dropout, rng)
        state = cell_step(cfg.cell_kind, x, state, self.params, "dec_cell")
        if cfg.attention == "dot":
            context, _ = luong_dot_attention(state.hidden, enc_states, src_key_mask)
            features = T.concat([state.hidden, context])
        else:
            features = state.hidden
        features = T.dropout(features, cfg.dropout, rng)
        logits = T.add(T.matmul(features, self.params["out.w"]), self.params["out.b"])
        return logits, state

    def forward(
        self,
        src_ids: np.ndarray,
        dec_ids: np.ndarray,
        rng=None,
        src_key_mask: Optional[np.ndarray] = None,
    ) -> Tensor:
        """Teacher-forced logits [batch, n_dec, vocab_size]."""
        src_ids = np.asarray(src_ids)
        dec_ids = np.asarray(dec_ids)
        cfg = self.config
        if dec_ids.shape[1] > cfg.max_decoder_len:
            raise ContractError(
                f"decoder input length {dec_ids.shape[1]} exceeds limit {cfg.max_decoder_len}"
            )
        if src_key_mask is None:
            src_key_mask = padding_mask(src_ids)
        enc_states, state = self.encode(src_ids, rng, src_key_mask)
        step_logits = []
        for t in range(dec_ids.shape[1]):
            logits, state = self.decode_step(
                state, dec_ids[:, t], enc_states, src_key_mask, rng
            )
            step_logits.append(logits)
        return T.stack(step_logits, axis=1)


def table4_presets(
    vocab_size: int, max_encoder_len: int, max_decoder_len: int
) -> list[tuple[str, object]]:
    """The six benchmarked model configurations, one per comparison row."""

    def recurrent(**overrides) -> RecurrentConfig:
        return RecurrentConfig(
            vocab_size=vocab_size,
            max_encoder_len=max_encoder_len,
            max_decoder_len=max_decoder_len,
            **overrides,
        )

    return [
        ("simple-rnn", recurrent(cell_kind="rnn")),
        ("lstm", recurrent(cell_kind="lstm")),
        ("gru", recurrent(cell_kind="gru")),
        ("bi-rnn", recurrent(cell_kind="rnn", bidirectional_encoder=True)),
        ("seq2seq-attention", recurrent(cell_kind="lstm", attention="dot")),
        (
            "transformer",
            TransformerConfig(
                vocab_size=vocab_size,
                max_encoder_len=max_encoder_len,
                max_decoder_len=max_decoder_len,
            ),
        ),
    ]
