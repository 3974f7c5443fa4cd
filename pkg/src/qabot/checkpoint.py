"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    magic "QABOTCKP" | u32 version
    family, config json, vocab json, meta json  (each u32 length + UTF-8)
    u32 n_params,  then per record:
        name (u32 + UTF-8), dtype str (u32 + UTF-8),
        u32 ndim, u64 dims..., raw row-major data
    u32 n_moments, same record layout (names "m:<param>" / "v:<param>")
    sha256 of everything above (32 bytes)

A round trip is bit-identical, so loading restores training exactly;
inference consumers simply ignore the optimizer moments.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigError,
)
from .recurrent import RecurrentConfig, Seq2SeqModel
from .tensor import Tensor
from .text import Vocabulary
from .transformer import TransformerConfig, TransformerModel

MAGIC = b"QABOTCKP"
FORMAT_VERSION = 1

ModelConfig = Union[TransformerConfig, RecurrentConfig]


@dataclass
class Checkpoint:
    family: str
    config: ModelConfig
    vocab: Vocabulary
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    adam_t: int = 0
    step: int = 0
    loss_history: list[float] = field(default_factory=list)
    train_config: Optional[dict] = None
    checksum: Optional[str] = None

    @property
    def model_tag(self) -> str:
        suffix = self.checksum[:12] if self.checksum else "unsaved"
        return f"{self.family}:{suffix}"


def config_from_json(family: str, payload: dict) -> ModelConfig:
    if family == "transformer":
        return TransformerConfig.from_json_dict(payload)
    if family == "recurrent":
        return RecurrentConfig.from_json_dict(payload)
    raise ConfigError(f"unknown model family {family!r}")


def build_model(config: ModelConfig, seed: int = 0, params=None):
    if isinstance(config, TransformerConfig):
        return TransformerModel(config, seed=seed, params=params)
    if isinstance(config, RecurrentConfig):
        return Seq2SeqModel(config, seed=seed, params=params)
    raise ConfigError(f"unknown config type {type(config).__name__}")


def model_from_checkpoint(ckpt: Checkpoint):
    """Rebuild the model with the checkpoint's parameters (copied)."""
    params = {
        name: Tensor(data.copy(), requires_grad=True)
        for name, data in ckpt.params.items()
    }
    return build_model(ckpt.config, params=params)


def _pack_str(out: bytearray, text: str) -> None:
    payload = text.encode("utf-8")
    out += struct.pack("<I", len(payload))
    out += payload


def _pack_array(out: bytearray, name: str, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array)
    _pack_str(out, name)
    _pack_str(out, array.dtype.str)
    out += struct.pack("<I", array.ndim)
    out += struct.pack(f"<{array.ndim}Q", *array.shape)
    out += array.tobytes()


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write the checkpoint; returns (and stores) its hex checksum."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", FORMAT_VERSION)
    _pack_str(out, ckpt.family)
    _pack_str(out, json.dumps(ckpt.config.to_json_dict()))
    _pack_str(out, json.dumps(ckpt.vocab.to_json_dict()))
    meta = {
        "step": ckpt.step,
        "adam_t": ckpt.adam_t,
        "loss_history": ckpt.loss_history,
        "train_config": ckpt.train_config,
    }
    _pack_str(out, json.dumps(meta))
    out += struct.pack("<I", len(ckpt.params))
    for name in sorted(ckpt.params):
        _pack_array(out, name, ckpt.params[name])
    moments = [("m:" + n, ckpt.adam_m[n]) for n in sorted(ckpt.adam_m)]
    moments += [("v:" + n, ckpt.adam_v[n]) for n in sorted(ckpt.adam_v)]
    out += struct.pack("<I", len(moments))
    for name, array in moments:
        _pack_array(out, name, array)
    digest = hashlib.sha256(bytes(out)).digest()
    out += digest
    Path(path).write_bytes(bytes(out))
    ckpt.checksum = digest.hex()
    return ckpt.checksum


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.payload):
            raise CheckpointTruncatedError(
                f"needed {n} bytes at offset {self.offset}, file ends at {len(self.payload)}"
            )
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self) -> tuple[str, np.ndarray]:
        name = self.text()
        dtype = np.dtype(self.text())
        ndim = self.u32()
        shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim)) if ndim else ()
        count = int(np.prod(shape)) if ndim else 1
        raw = self.take(count * dtype.itemsize)
        return name, np.frombuffer(raw, dtype=dtype).reshape(shape).copy()


def load_checkpoint(path) -> Checkpoint:
    blob = Path(path).read_bytes()
    if len(blob) < len(MAGIC) + 4 + 32:
        raise CheckpointTruncatedError(f"file too short: {len(blob)} bytes")
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    body, stored_digest = blob[:-32], blob[-32:]
    reader = _Reader(body)
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {version}, this build reads {FORMAT_VERSION}"
        )
    family = reader.text()
    config = config_from_json(family, json.loads(reader.text()))
    vocab = Vocabulary.from_json_dict(json.loads(reader.text()))
    meta = json.loads(reader.text())
    params = dict(reader.array() for _ in range(reader.u32()))
    adam_m: dict[str, np.ndarray] = {}
    adam_v: dict[str, np.ndarray] = {}
    for _ in range(reader.u32()):
        name, array = reader.array()
        kind, _, param_name = name.partition(":")
        (adam_m if kind == "m" else adam_v)[param_name] = array
    if reader.offset != len(body):
        raise CheckpointError(
            f"{len(body) - reader.offset} unexpected trailing bytes"
        )
    digest = hashlib.sha256(body).digest()
    if digest != stored_digest:
        raise CheckpointChecksumError("checksum mismatch: checkpoint is corrupted")
    return Checkpoint(
        family=family,
        config=config,
        vocab=vocab,
        params=params,
        adam_m=adam_m,
        adam_v=adam_v,
        adam_t=meta["adam_t"],
        step=meta["step"],
        loss_history=list(meta["loss_history"]),
        train_config=meta.get("train_config"),
        checksum=digest.hex(),
    )
