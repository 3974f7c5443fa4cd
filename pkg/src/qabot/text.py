"""Text pipeline: normalization, tokenization, vocabulary, dataset ingestion.

The dataset file format is UTF-8 TSV, one pair per line: question TAB
answer (a third column, when present, is ignored). Lines starting with
'#' and blank lines are skipped. Tokenization is word-level whitespace
splitting with terminal punctuation detached as its own token.
"""

from __future__ import annotations

import re
import unicodedata
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .errors import (
    ContractError,
    DatasetError,
    EncodingError,
    ParseError,
    VocabularyError,
)

PAD_ID = 0
START_ID = 1
END_ID = 2
UNK_ID = 3

PAD_TOKEN = "<pad>"
START_TOKEN = "<start>"
END_TOKEN = "<end>"
UNK_TOKEN = "<unk>"

RESERVED_TOKENS = (PAD_TOKEN, START_TOKEN, END_TOKEN, UNK_TOKEN)

# Sentence-final punctuation peeled off the end of a word, each mark as its
# own token. Covers ASCII enders plus the Bengali danda and double danda.
TERMINAL_PUNCTUATION = frozenset({".", "!", "?", "।", "॥"})

_WHITESPACE_RUN = re.compile(r"\s+")

DEFAULT_MAX_INPUT_LEN = 15
DEFAULT_MAX_OUTPUT_LEN = 10


def normalize(text) -> str:
    """Canonically compose (NFC), trim, and collapse whitespace runs.

    Accepts str or UTF-8 bytes; invalid bytes raise EncodingError with the
    failing byte offset. NFC keeps combining marks attached to their base
    characters.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError(exc.reason, exc.start) from exc
    text = unicodedata.normalize("NFC", text)
    return _WHITESPACE_RUN.sub(" ", text.strip())


def tokenize(text: str) -> list[str]:
    """Split normalized text on whitespace, detaching terminal punctuation."""
    tokens: list[str] = []
    for chunk in text.split():
        tail: list[str] = []
        while chunk and chunk[-1] in TERMINAL_PUNCTUATION:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        if chunk:
            tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tokens


@dataclass(frozen=True)
class QAPair:
    """One training example: tokenized question and tokenized answer."""

    question: tuple[str, ...]
    answer: tuple[str, ...]


@dataclass(frozen=True)
class DatasetStats:
    """Table-style dataset properties, always recomputed from the pairs."""

    question_types: int
    question_tokens: int
    answer_types: int
    answer_tokens: int
    max_input_len: int
    max_output_len: int
    total_pairs: int


class QADataset:
    """Ordered collection of QA pairs plus computed statistics.

    ``rejected`` counts ingestion lines whose question or answer was empty
    after normalization.
    """

    def __init__(self, pairs: Iterable[QAPair], rejected: int = 0):
        self.pairs: tuple[QAPair, ...] = tuple(pairs)
        self.rejected = rejected

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    @property
    def stats(self) -> DatasetStats:
        q_counts: Counter = Counter()
        a_counts: Counter = Counter()
        max_in = 0
        max_out = 0
        for pair in self.pairs:
            q_counts.update(pair.question)
            a_counts.update(pair.answer)
            max_in = max(max_in, len(pair.question))
            max_out = max(max_out, len(pair.answer))
        return DatasetStats(
            question_types=len(q_counts),
            question_tokens=sum(q_counts.values()),
            answer_types=len(a_counts),
            answer_tokens=sum(a_counts.values()),
            max_input_len=max_in,
            max_output_len=max_out,
            total_pairs=len(self.pairs),
        )


class Vocabulary:
    """Bidirectional token<->id map with reserved PAD/START/END/UNK ids."""

    def __init__(self, tokens: Iterable[str]):
        self._id_to_token: list[str] = list(RESERVED_TOKENS) + [
            t for t in tokens if t not in RESERVED_TOKENS
        ]
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise VocabularyError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def size(self) -> int:
        return len(self._id_to_token)

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise VocabularyError(
                f"id {token_id} outside vocabulary of size {self.size}"
            )
        return self._id_to_token[token_id]

    def to_json_dict(self) -> dict:
        return {"tokens": self._id_to_token[len(RESERVED_TOKENS):]}

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Vocabulary":
        return cls(payload["tokens"])


def build_vocab(dataset: QADataset, min_count: int = 1) -> Vocabulary:
    """Combined question+answer vocabulary with a frequency threshold.

    Id assignment is deterministic: descending frequency, ties broken by
    code-point order. Reserved ids 0-3 are always present.
    """
    if min_count < 1:
        raise ContractError(f"min_count must be >= 1, got {min_count}")
    if len(dataset) == 0:
        raise DatasetError("cannot build a vocabulary from an empty dataset")
    counts: Counter = Counter()
    for pair in dataset:
        counts.update(pair.question)
        counts.update(pair.answer)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocabulary(kept)


@dataclass
class EncodeMetrics:
    """Running counters for silent encode events."""

    unknown_tokens: int = 0
    truncated_sequences: int = 0


def encode(
    tokens: Iterable[str],
    vocab: Vocabulary,
    max_len: int,
    add_start: bool = True,
    add_end: bool = True,
    metrics: Optional[EncodeMetrics] = None,
) -> list[int]:
    """Token ids padded to exactly max_len + 2.

    Sequences longer than max_len are truncated before START/END are
    attached; unknown tokens map to UNK. Truncation and UNK hits are
    counted on ``metrics`` when given, never raised.
    """
    if max_len < 1:
        raise ContractError(f"max_len must be >= 1, got {max_len}")
    tokens = list(tokens)
    if len(tokens) > max_len:
        tokens = tokens[:max_len]
        if metrics is not None:
            metrics.truncated_sequences += 1
    ids = []
    for token in tokens:
        token_id = vocab.id_of(token)
        if token_id == UNK_ID and metrics is not None:
            metrics.unknown_tokens += 1
        ids.append(token_id)
    if add_start:
        ids.insert(0, START_ID)
    if add_end:
        ids.append(END_ID)
    target = max_len + 2
    ids.extend([PAD_ID] * (target - len(ids)))
    return ids


def decode_ids(ids: Iterable[int], vocab: Vocabulary) -> list[str]:
    """Inverse of encode: stop at the first END, drop PAD and START."""
    tokens = []
    for token_id in ids:
        token_id = int(token_id)
        if token_id == END_ID:
            break
        if token_id in (PAD_ID, START_ID):
            continue
        tokens.append(vocab.token_of(token_id))
    return tokens


def load_dataset(path, fmt: str = "tsv") -> QADataset:
    """Read a QA dataset file, tokenizing and counting rejected pairs."""
    if fmt != "tsv":
        raise ContractError(f"unsupported dataset format: {fmt!r}")
    raw = Path(path).read_bytes()
    try:
        content = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(exc.reason, exc.start) from exc
    pairs: list[QAPair] = []
    rejected = 0
    for line_number, line in enumerate(content.splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        columns = line.split("\t")
        if len(columns) < 2:
            raise ParseError("expected question TAB answer", line_number)
        question = tokenize(normalize(columns[0]))
        answer = tokenize(normalize(columns[1]))
        if not question or not answer:
            rejected += 1
            continue
        pairs.append(QAPair(tuple(question), tuple(answer)))
    if not pairs:
        raise DatasetError(f"no usable pairs in {path}")
    return QADataset(pairs, rejected=rejected)


def split(
    dataset: QADataset, train_fraction: float, seed: int
) -> tuple[QADataset, QADataset]:
    """Seeded shuffle then prefix split into (train, test)."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError(
            f"train_fraction must be in (0, 1), got {train_fraction}"
        )
    n = len(dataset)
    if n < 2:
        raise DatasetError("need at least two pairs to split")
    n_train = int(n * train_fraction + 0.5)
    if n_train == 0 or n_train == n:
        raise DatasetError(
            f"degenerate split: {n_train} train / {n - n_train} test from {n} pairs"
        )
    order = np.random.default_rng(seed).permutation(n)
    train = [dataset.pairs[i] for i in order[:n_train]]
    test = [dataset.pairs[i] for i in order[n_train:]]
    return QADataset(train), QADataset(test)


def demo_corpus_path() -> Path:
    """Location of the bundled demo QA corpus."""
    return Path(__file__).parent / "data" / "demo_corpus.tsv"


def stats_report(dataset: QADataset) -> str:
    """Human-readable five-row dataset properties table."""
    s = dataset.stats
    rows = [
        ("Question tokens", f"{s.question_types} types / {s.question_tokens} total"),
        ("Answer tokens", f"{s.answer_types} types / {s.answer_tokens} total"),
        ("Max input length", str(s.max_input_len)),
        ("Max output length", str(s.max_output_len)),
        ("Total pairs", str(s.total_pairs)),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{'Dataset property'.ljust(width)}  Value"]
    lines += [f"{name.ljust(width)}  {value}" for name, value in rows]
    return "\n".join(lines)
