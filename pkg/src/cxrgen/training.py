"""Teacher-forced training loop: batching, loss, Adam updates, validation.

Loss is the mean sparse cross-entropy over every non-pad target position in
the batch, pooled across examples, so duplicating an example k times leaves
both the loss and the gradient direction unchanged. Pad positions contribute
exactly zero to the loss and to every gradient.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .checkpoint import parameter_checksum, save_checkpoint
from .errors import ConfigError, ContractError, TrainingError
from .model import ModelConfig, decoder_forward, encode_inputs
from .optim import Adam
from .tensor import Tensor
from .text import PAD_ID, encode_tokens


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    learning_rate: float = 3e-4
    epochs: int = 50
    seed: int = 0
    patience: int | None = 10
    checkpoint_every: int = 0
    grad_clip: float | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be at least 1, got {self.epochs}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience, when set, must be at least 1")


@dataclass(frozen=True)
class EncodedExample:
    """One training example with the report already encoded to max_len ids."""
    id: str
    features: np.ndarray
    demo: np.ndarray | None
    ids: np.ndarray


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    seconds: float
    param_checksum: str


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for record in self.records:
                fh.write(json.dumps(asdict(record)) + "\n")

    def trajectory(self) -> list[tuple[float, float, str]]:
        """The reproducible part of the log (losses and checksums, no timing)."""
        return [(r.train_loss, r.val_loss, r.param_checksum) for r in self.records]


def encode_examples(points, vocab, codec, cfg: ModelConfig) -> list[EncodedExample]:
    """Turn DataPoints into ready-to-train arrays using the dataset's codec."""
    examples = []
    for point in points:
        demo = None
        if cfg.uses_demographics:
            demo = codec.encode(point.demographics)
            if demo.shape[0] != cfg.demographic_dim:
                raise ConfigError(
                    f"codec produces {demo.shape[0]}-wide vectors but the model "
                    f"expects {cfg.demographic_dim}"
                )
        ids = encode_tokens(point.report, vocab, cfg.max_len)
        examples.append(EncodedExample(point.id, np.asarray(point.features), demo, ids))
    return examples


def teacher_forcing_views(ids: np.ndarray, pad_id: int = PAD_ID):
    """Split an encoded sequence into decoder input, targets, and loss mask.

    The sequence is trimmed at the end marker: the decoder input runs from
    the start token up to the token before the end marker, and the targets
    are the same span shifted left (so the end marker is predicted).
    Trailing pads carry no information and are dropped.
    """
    ids = np.asarray(ids, dtype=np.int64)
    nonpad = np.nonzero(ids != pad_id)[0]
    if nonpad.size < 2:
        raise ContractError("encoded report is too short to train on")
    last = int(nonpad[-1])
    inputs = ids[:last]
    targets = ids[1:last + 1]
    mask = targets != pad_id
    return inputs, targets, mask


def batch_loss(batch, params, cfg: ModelConfig, training: bool, rng=None) -> tuple[Tensor, int]:
    """Pooled cross-entropy over all non-pad positions of a batch."""
    total = None
    count = 0
    for ex in batch:
        hybrid = encode_inputs(ex.features, ex.demo, params, cfg,
                               training=training, rng=rng)
        inputs, targets, mask = teacher_forcing_views(ex.ids)
        logits = decoder_forward(inputs, hybrid, params, cfg,
                                 training=training, rng=rng)
        part = T.sparse_cross_entropy(logits, targets, mask, reduction="sum")
        total = part if total is None else T.add(total, part)
        count += int(mask.sum())
    return T.scale(total, 1.0 / count), count


def clip_gradients(params, max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= factor
    return norm


def train_step(batch, params, optimizer: Adam, cfg: ModelConfig,
               rng=None, grad_clip: float | None = None) -> tuple[float, int]:
    """One optimization step; returns (loss, token count) for the batch."""
    if not batch:
        raise ContractError("train_step needs a non-empty batch")
    T.reset_graph()
    optimizer.zero_grad()
    loss, count = batch_loss(batch, params, cfg, training=True, rng=rng)
    value = loss.item()
    if not np.isfinite(value):
        ids = [ex.id for ex in batch]
        raise TrainingError(f"non-finite loss {value} on batch {ids}")
    T.backward(loss)
    if grad_clip is not None:
        clip_gradients(params, grad_clip)
    optimizer.step()
    T.reset_graph()
    return value, count


def evaluate_loss(examples, params, cfg: ModelConfig, batch_size: int = 64) -> float:
    """Mean token loss with dropout disabled and no gradient recording."""
    if not examples:
        raise ConfigError("cannot evaluate on an empty split")
    total = 0.0
    count = 0
    with T.no_grad():
        for start in range(0, len(examples), batch_size):
            batch = examples[start:start + batch_size]
            loss, n = batch_loss(batch, params, cfg, training=False)
            total += loss.item() * n
            count += n
    return total / count


def epoch_order(n: int, epoch: int, seed: int) -> np.ndarray:
    """The seeded permutation used for epoch ``epoch``; exposed for testing."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def fit(train_examples, val_examples, params, cfg: ModelConfig,
        train_cfg: TrainConfig, checkpoint_dir=None, log_path=None,
        restore_best: bool = True) -> TrainLog:
    """Epoch loop with seeded shuffling, per-epoch validation, and best tracking.

    The parameter set achieving the minimum validation loss is retained: it
    is restored into ``params`` at the end (unless ``restore_best=False``)
    and written to ``checkpoint_dir/best`` when a directory is given.
    """
    if not train_examples:
        raise ConfigError("training split is empty")
    if not val_examples:
        raise ConfigError("validation split is empty")
    dropout_rng = np.random.default_rng([train_cfg.seed, 0xD0])
    optimizer = Adam(params, lr=train_cfg.learning_rate)
    log = TrainLog()
    best_state: dict[str, np.ndarray] | None = None
    stale = 0
    for epoch in range(train_cfg.epochs):
        started = time.perf_counter()
        order = epoch_order(len(train_examples), epoch, train_cfg.seed)
        loss_sum = 0.0
        token_count = 0
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_examples[i] for i in order[start:start + train_cfg.batch_size]]
            value, n = train_step(batch, params, optimizer, cfg,
                                  rng=dropout_rng, grad_clip=train_cfg.grad_clip)
            loss_sum += value * n
            token_count += n
        train_loss = loss_sum / token_count
        val_loss = evaluate_loss(val_examples, params, cfg, train_cfg.batch_size)
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            seconds=time.perf_counter() - started,
            param_checksum=parameter_checksum(params, cfg),
        )
        log.append(record)
        if log_path is not None:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(asdict(record)) + "\n")
        if val_loss < log.best_val_loss:
            log.best_val_loss = val_loss
            log.best_epoch = epoch
            best_state = {name: p.data.copy() for name, p in params.items()}
            stale = 0
        else:
            stale += 1
        if train_cfg.checkpoint_every and (epoch + 1) % train_cfg.checkpoint_every == 0 \
                and checkpoint_dir is not None:
            save_checkpoint(params, cfg, f"{checkpoint_dir}/epoch_{epoch}")
        if train_cfg.patience is not None and stale >= train_cfg.patience:
            break
    if best_state is not None:
        if restore_best:
            for name, data in best_state.items():
                params[name].data = data
        if checkpoint_dir is not None:
            snapshot = {name: Tensor(data, requires_grad=True)
                        for name, data in best_state.items()}
            save_checkpoint(snapshot, cfg, f"{checkpoint_dir}/best")
    return log
