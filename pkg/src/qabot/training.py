"""Loss, Adam, learning-rate schedule, mini-batching, and the training loop.

All randomness (epoch shuffles, dropout masks) is derived from
(seed, purpose, counter) so a run is fully reproducible and a resumed run
replays the exact random stream of the uninterrupted one.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .checkpoint import Checkpoint, save_checkpoint
from .errors import ConfigError, ContractError, TrainingError
from .tensor import Tape, Tensor, backward
from .text import PAD_ID, QADataset, Vocabulary, encode

SCHEDULES = ("constant", "warmup")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 28
    epochs: int = 120
    base_lr: float = 0.0014
    schedule: str = "warmup"
    warmup_steps: int = 4000
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9
    seed: int = 0
    grad_clip: float = 1.0
    checkpoint_path: Optional[str] = None
    checkpoint_interval: int = 0  # steps between periodic saves; 0 = final only
    metrics_path: Optional[str] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.warmup_steps < 1:
            raise ConfigError(f"warmup_steps must be >= 1, got {self.warmup_steps}")
        for beta in (self.beta1, self.beta2):
            if not 0.0 <= beta < 1.0:
                raise ConfigError(f"Adam betas must be in [0, 1), got {beta}")
        if self.eps <= 0:
            raise ConfigError(f"Adam eps must be positive, got {self.eps}")
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")

    def to_json_dict(self) -> dict:
        return asdict(self)


def derive_rng(seed: int, purpose: str, *counters: int) -> np.random.Generator:
    """Deterministic generator for one (purpose, counter) slot of a run."""
    return np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(purpose.encode()), *counters])
    )


def cross_entropy_loss(logits: Tensor, targets: np.ndarray, pad_id: int = PAD_ID) -> Tensor:
    """Mean -log softmax(logits)[target] over non-pad target positions.

    Computed via log-sum-exp; PAD positions contribute nothing to the mean.
    """
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ContractError(
            f"target shape {targets.shape} does not match logits {logits.shape}"
        )
    mask = targets != pad_id
    count = int(mask.sum())
    if count == 0:
        raise ContractError("all target positions are padding")
    safe_targets = np.where(mask, targets, 0)
    log_probs = T.log_softmax(logits, axis=-1)
    picked = T.gather_last(log_probs, safe_targets)
    masked = T.mul(picked, Tensor(mask.astype(np.float64)))
    return T.affine(T.sum_all(masked), -1.0 / count)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def adam_init(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        m={name: np.zeros_like(p.data) for name, p in params.items()},
        v={name: np.zeros_like(p.data) for name, p in params.items()},
    )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> AdamState:
    """One bias-corrected Adam update, in place on params and state."""
    state.t += 1
    t = state.t
    m_corr = 1.0 - beta1 ** t
    v_corr = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        m_hat = m / m_corr
        v_hat = v / v_corr
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def lr_at(step: int, config: TrainConfig) -> float:
    """Learning rate for a 1-based step under the configured schedule.

    warmup: linear rise to base_lr at warmup_steps, then 1/sqrt(step) decay
    scaled so the peak equals base_lr.
    """
    if step < 1:
        raise ContractError(f"step must be >= 1, got {step}")
    if config.schedule == "constant":
        return config.base_lr
    w = config.warmup_steps
    return config.base_lr * min(step / w, math.sqrt(w / step))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[float, bool]:
    """Scale all gradients so the global norm is at most max_norm.

    The squared norms are reduced in sorted name order so the result does
    not depend on dict insertion order (bitwise reproducibility).
    """
    total = math.sqrt(sum(float((grads[k] * grads[k]).sum()) for k in sorted(grads)))
    if max_norm <= 0 or total <= max_norm or total == 0.0:
        return total, False
    factor = max_norm / total
    for g in grads.values():
        g *= factor
    return total, True


def encode_pairs(
    dataset: QADataset, vocab: Vocabulary, max_input_len: int, max_output_len: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(source, decoder input, targets) id matrices for teacher forcing.

    Decoder input is the answer shifted right behind START; targets are the
    answer shifted left ending in END.
    """
    src = np.array([encode(p.question, vocab, max_input_len) for p in dataset])
    full = np.array([encode(p.answer, vocab, max_output_len) for p in dataset])
    return src, full[:, :-1], full[:, 1:]


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    loss_history: list[float]
    clip_steps: list[int] = field(default_factory=list)


def train(
    model,
    vocab: Vocabulary,
    dataset: QADataset,
    config: TrainConfig,
    resume: Optional[Checkpoint] = None,
    progress: Optional[Callable[[int, float, float], None]] = None,
) -> TrainResult:
    """Teacher-forced training loop, deterministic for a fixed seed.

    Each epoch is a seeded shuffle cut into fixed-size batches (final short
    batch kept). Per-step losses are appended to the checkpoint history; a
    non-finite loss aborts and leaves the last saved checkpoint on disk.
    """
    n = len(dataset)
    if n == 0:
        raise ContractError("training set is empty")
    cfg = model.config
    src, dec_in, targets = encode_pairs(
        dataset, vocab, cfg.max_encoder_len - 2, cfg.max_decoder_len - 2
    )
    steps_per_epoch = -(-n // config.batch_size)
    total_steps = config.epochs * steps_per_epoch

    adam = AdamState(
        m={k: a.copy() for k, a in resume.adam_m.items()},
        v={k: a.copy() for k, a in resume.adam_v.items()},
        t=resume.adam_t,
    ) if resume is not None else adam_init(model.params)
    start_step = resume.step if resume is not None else 0
    if start_step >= total_steps:
        raise ContractError(
            f"resume step {start_step} is not before total steps {total_steps}"
        )
    loss_history = list(resume.loss_history) if resume is not None else []
    clip_steps: list[int] = []

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(
            family=model.family,
            config=cfg,
            vocab=vocab,
            params={k: p.data.copy() for k, p in model.params.items()},
            adam_m={k: a.copy() for k, a in adam.m.items()},
            adam_v={k: a.copy() for k, a in adam.v.items()},
            adam_t=adam.t,
            step=step,
            loss_history=list(loss_history),
            train_config=config.to_json_dict(),
        )

    metrics = open(config.metrics_path, "a") if config.metrics_path else None
    perm_epoch = -1
    perm = None
    try:
        for step in range(start_step + 1, total_steps + 1):
            epoch = (step - 1) // steps_per_epoch
            if epoch != perm_epoch:
                perm = derive_rng(config.seed, "shuffle", epoch).permutation(n)
                perm_epoch = epoch
            offset = ((step - 1) % steps_per_epoch) * config.batch_size
            batch = perm[offset:offset + config.batch_size]
            drop_rng = derive_rng(config.seed, "dropout", step)
            for p in model.params.values():
                p.grad = None
            with Tape():
                logits = model.forward(src[batch], dec_in[batch], rng=drop_rng)
                loss = cross_entropy_loss(logits, targets[batch], PAD_ID)
                loss_value = loss.item()
                if not math.isfinite(loss_value):
                    raise TrainingError(
                        f"non-finite loss {loss_value} at step {step}; "
                        "last checkpoint retained"
                    )
                backward(loss)
            grads = {
                name: p.grad for name, p in model.params.items() if p.grad is not None
            }
            _, clipped = clip_gradients(grads, config.grad_clip)
            if clipped:
                clip_steps.append(step)
            lr = lr_at(step, config)
            adam_step(model.params, grads, adam, lr,
                      config.beta1, config.beta2, config.eps)
            loss_history.append(loss_value)
            if metrics is not None:
                metrics.write(f"{step}\t{lr:.10g}\t{loss_value:.10g}\n")
            if progress is not None:
                progress(step, lr, loss_value)
            if (
                config.checkpoint_path
                and config.checkpoint_interval
                and step % config.checkpoint_interval == 0
                and step < total_steps
            ):
                save_checkpoint(snapshot(step), config.checkpoint_path)
    finally:
        if metrics is not None:
            metrics.close()

    final = snapshot(total_steps)
    if config.checkpoint_path:
        save_checkpoint(final, config.checkpoint_path)
    return TrainResult(checkpoint=final, loss_history=loss_history, clip_steps=clip_steps)
