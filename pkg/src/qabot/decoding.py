"""Greedy autoregressive decoding and corpus BLEU evaluation.

BLEU here is corpus-level BLEU-4 with uniform 1/4 weights over modified
(clipped) n-gram precisions, a single reference per hypothesis, and
brevity penalty exp(1 - r/c) when c < r. Short answers rarely contain
higher-order n-grams, so a zero numerator for n >= 2 is smoothed to a
precision of 1/(2 * denominator); orders with an empty denominator are
skipped (their log term is zero). These constants make scores comparable
across runs of this engine, not across differently-configured toolkits.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .checkpoint import Checkpoint, build_model, model_from_checkpoint
from .errors import ContractError
from .text import (
    END_ID,
    QADataset,
    START_ID,
    build_vocab,
    decode_ids,
    encode,
    normalize,
    tokenize,
)
from .training import TrainConfig, train
from .transformer import TransformerModel, padding_mask


@dataclass
class GreedyResult:
    answer: str
    tokens: list[str]
    token_ids: list[int]  # one argmax id per step, END included when emitted


class InferenceSession:
    """A loaded checkpoint ready to answer questions."""

    def __init__(self, checkpoint: Checkpoint):
        self.checkpoint = checkpoint
        self.model = model_from_checkpoint(checkpoint)
        self.vocab = checkpoint.vocab
        self.config = checkpoint.config

    @property
    def model_tag(self) -> str:
        return self.checkpoint.model_tag

    def answer(self, question: str, max_steps: Optional[int] = None) -> GreedyResult:
        return greedy_decode(self, question, max_steps)


def _as_session(source) -> InferenceSession:
    return source if isinstance(source, InferenceSession) else InferenceSession(source)


def greedy_decode(
    session, question: str, max_steps: Optional[int] = None
) -> GreedyResult:
    """Argmax decoding from START until END or the step budget runs out.

    Accepts a loaded InferenceSession or a raw Checkpoint. The question is
    encoded with both START and END; the decoder begins from START alone.
    Argmax ties break toward the lowest token id.
    """
    session = _as_session(session)
    cfg = session.config
    if max_steps is None:
        max_steps = cfg.max_decoder_len
    if max_steps < 1:
        raise ContractError(f"max_steps must be >= 1, got {max_steps}")
    tokens = tokenize(normalize(question))
    src = np.array([encode(tokens, session.vocab, cfg.max_encoder_len - 2)])
    model = session.model
    generated: list[int] = []
    if isinstance(model, TransformerModel):
        enc_out = model.encoder_forward(src)
        while len(generated) < max_steps:
            prefix = np.array([[START_ID] + generated])
            if prefix.shape[1] > cfg.max_decoder_len:
                break
            logits = model.decoder_forward(prefix, enc_out, src)
            next_id = int(np.argmax(logits.data[0, -1]))
            generated.append(next_id)
            if next_id == END_ID:
                break
    else:
        mask = padding_mask(src)
        enc_states, state = model.encode(src)
        token = START_ID
        while len(generated) < max_steps:
            logits, state = model.decode_step(
                state, np.array([token]), enc_states, mask
            )
            next_id = int(np.argmax(logits.data[0]))
            generated.append(next_id)
            if next_id == END_ID:
                break
            token = next_id
    answer_tokens = decode_ids(generated, session.vocab)
    return GreedyResult(
        answer=" ".join(answer_tokens), tokens=answer_tokens, token_ids=generated
    )


@dataclass
class BleuReport:
    """Corpus BLEU with its components, score scaled to [0, 100]."""

    score: float
    precisions: list[float]
    brevity_penalty: float
    hypothesis_length: int
    reference_length: int
    max_n: int = 4

    def to_json_dict(self) -> dict:
        return {
            "bleu": self.score,
            "precisions": self.precisions,
            "brevity_penalty": self.brevity_penalty,
            "hypothesis_length": self.hypothesis_length,
            "reference_length": self.reference_length,
            "max_n": self.max_n,
        }


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    hypotheses: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_n: int = 4,
) -> BleuReport:
    """Corpus-level modified n-gram precision BLEU, single reference."""
    if len(hypotheses) != len(references):
        raise ContractError(
            f"{len(hypotheses)} hypotheses vs {len(references)} references"
        )
    if not hypotheses:
        raise ContractError("bleu needs at least one hypothesis/reference pair")
    if max_n < 1:
        raise ContractError(f"max_n must be >= 1, got {max_n}")
    matched = [0] * max_n
    total = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp = list(hyp)
        ref = list(ref)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            if not hyp_counts:
                continue
            ref_counts = _ngrams(ref, n)
            total[n - 1] += sum(hyp_counts.values())
            matched[n - 1] += sum(
                min(count, ref_counts[gram]) for gram, count in hyp_counts.items()
            )
    precisions = []
    log_sum = 0.0
    weight = 1.0 / max_n
    score_is_zero = False
    for n in range(1, max_n + 1):
        num, den = matched[n - 1], total[n - 1]
        if den == 0:
            precisions.append(0.0)  # order absent from the corpus: skipped
            continue
        if num == 0:
            if n == 1:
                precisions.append(0.0)
                score_is_zero = True
                continue
            p = 1.0 / (2.0 * den)  # smoothing for short-answer corpora
        else:
            p = num / den
        precisions.append(p)
        log_sum += weight * math.log(p)
    if hyp_len == 0:
        brevity_penalty = 0.0
        score_is_zero = True
    elif hyp_len < ref_len:
        brevity_penalty = math.exp(1.0 - ref_len / hyp_len)
    else:
        brevity_penalty = 1.0
    score = 0.0 if score_is_zero else brevity_penalty * math.exp(log_sum) * 100.0
    return BleuReport(
        score=score,
        precisions=precisions,
        brevity_penalty=brevity_penalty,
        hypothesis_length=hyp_len,
        reference_length=ref_len,
        max_n=max_n,
    )


def evaluate(session, dataset: QADataset) -> BleuReport:
    """Greedy-decode every question and score against the single reference."""
    session = _as_session(session)
    if len(dataset) == 0:
        raise ContractError("evaluation set is empty")
    hypotheses = []
    references = []
    for pair in dataset:
        result = greedy_decode(session, " ".join(pair.question))
        hypotheses.append(result.tokens)
        references.append(list(pair.answer))
    return bleu(hypotheses, references)


@dataclass
class CompareRow:
    name: str
    report: BleuReport
    final_loss: float

    def to_json_dict(self) -> dict:
        payload = {"name": self.name, "final_loss": self.final_loss}
        payload.update(self.report.to_json_dict())
        return payload


def compare(
    presets: Sequence[tuple[str, object]],
    train_set: QADataset,
    train_config: TrainConfig,
    eval_set: Optional[QADataset] = None,
    vocab=None,
    seed: int = 0,
    progress=None,
) -> list[CompareRow]:
    """Train every preset under one TrainConfig and report one row each.

    Scores against eval_set when given, else against the training set (the
    memorization surrogate); the vocabulary defaults to one built over the
    training set.
    """
    if eval_set is None:
        eval_set = train_set
    if vocab is None:
        vocab = build_vocab(train_set)
    if len(eval_set) == 0:
        raise ContractError("evaluation set is empty")
    rows = []
    for name, model_config in presets:
        model = build_model(model_config, seed=seed)
        result = train(model, vocab, train_set, train_config, progress=progress)
        session = InferenceSession(result.checkpoint)
        report = evaluate(session, eval_set)
        rows.append(CompareRow(
            name=name, report=report, final_loss=result.loss_history[-1]
        ))
    return rows


def format_compare_table(rows: Sequence[CompareRow]) -> str:
    width = max(len(row.name) for row in rows)
    lines = [f"{'Model'.ljust(width)}  BLEU    Final loss"]
    for row in rows:
        lines.append(
            f"{row.name.ljust(width)}  {row.report.score:6.2f}  {row.final_loss:.4f}"
        )
    return "\n".join(lines)
