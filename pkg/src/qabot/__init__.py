"""qabot: a from-scratch neural question-answering chatbot engine.

Trains a small encoder-decoder transformer (plus recurrent seq2seq
baselines) on question-answer pairs, evaluates with corpus BLEU, and
serves interactive chat over a CLI and an HTTP API.
"""

__version__ = "0.1.0"

from .checkpoint import (
    Checkpoint,
    build_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .decoding import InferenceSession, bleu, compare, evaluate, greedy_decode
from .recurrent import RecurrentConfig, Seq2SeqModel, table4_presets
from .tensor import Tape, Tensor, backward
from .text import (
    QADataset,
    QAPair,
    Vocabulary,
    build_vocab,
    demo_corpus_path,
    load_dataset,
    split,
)
from .training import TrainConfig, train
from .transformer import TransformerConfig, TransformerModel

__all__ = [
    "__version__",
    "Tensor",
    "Tape",
    "backward",
    "Vocabulary",
    "QAPair",
    "QADataset",
    "load_dataset",
    "build_vocab",
    "split",
    "demo_corpus_path",
    "TransformerConfig",
    "TransformerModel",
    "RecurrentConfig",
    "Seq2SeqModel",
    "table4_presets",
    "TrainConfig",
    "train",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "build_model",
    "model_from_checkpoint",
    "InferenceSession",
    "greedy_decode",
    "bleu",
    "evaluate",
    "compare",
]
