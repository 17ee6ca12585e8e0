"""Optimization harness: losses, class-balanced batching, the epoch loop
with validation-based early stopping, and run-directory output."""

from __future__ import annotations

import copy
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DivergedLoss, EmptyClass, InvalidConfig, ShapeMismatch
from .models import EngagementModel

LOSS_KINDS = ("cross_entropy", "binary_cross_entropy", "mean_squared_error")


@dataclass
class TrainConfig:
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    learning_rate: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    balanced_batching: bool = True
    seed: int = 0
    loss: str = "cross_entropy"

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.loss not in LOSS_KINDS:
            raise InvalidConfig(f"unknown loss {self.loss!r}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise InvalidConfig("batch_size and max_epochs must be >= 1")
        if self.patience < 1:
            raise InvalidConfig("patience must be >= 1")
        if self.max_epochs > 1 and self.patience >= self.max_epochs:
            raise InvalidConfig("patience must be < max_epochs")
        if self.learning_rate <= 0:
            raise InvalidConfig("learning_rate must be positive")

    def to_dict(self) -> dict:
        return {"batch_size": self.batch_size, "max_epochs": self.max_epochs,
                "patience": self.patience, "learning_rate": self.learning_rate,
                "betas": list(self.betas), "balanced_batching": self.balanced_batching,
                "seed": self.seed, "loss": self.loss}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["betas"] = tuple(d.get("betas", (0.9, 0.999)))
        return cls(**d)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_metric: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0
    metric_name: str = "accuracy"

    def __len__(self) -> int:
        return len(self.train_loss)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"epoch,train_loss,val_{self.metric_name},seconds\n")
            for e, (tl, vm, s) in enumerate(zip(
                    self.train_loss, self.val_metric, self.epoch_seconds)):
                fh.write(f"{e},{tl:.8f},{vm:.8f},{s:.3f}\n")


def balanced_batches(labels, batch_size: int, seed: int,
                     num_classes: int | None = None) -> list[list[int]]:
    """Index batches in which every class meets its per-batch quota.

    Each batch holds at least ``batch_size // C`` samples of every class
    (the remainder goes to the largest classes). Minority classes are drawn
    with replacement across reshuffled cycles; an epoch is sized so the
    largest class is covered once, and no sample repeats before its class's
    current cycle is exhausted.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = int(num_classes if num_classes is not None else labels.max() + 1)
    if n_classes < 2:
        raise InvalidConfig("balanced batching needs >= 2 classes")
    if batch_size < n_classes:
        raise InvalidConfig(
            f"batch_size {batch_size} < number of classes {n_classes}")

    per_class = [np.flatnonzero(labels == c) for c in range(n_classes)]
    for c, idx in enumerate(per_class):
        if len(idx) == 0:
            raise EmptyClass(f"class {c} has no samples")

    quota = np.full(n_classes, batch_size // n_classes, dtype=np.int64)
    remainder = batch_size - quota.sum()
    if remainder:
        by_size = sorted(range(n_classes), key=lambda c: (-len(per_class[c]), c))
        for c in by_size[:remainder]:
            quota[c] += 1

    rng = np.random.default_rng(seed)
    cursors = [0] * n_classes
    orders = [rng.permutation(idx) for idx in per_class]

    def draw(c: int, k: int) -> np.ndarray:
        out = np.empty(k, dtype=np.int64)
        got = 0
        while got < k:
            take = min(k - got, len(orders[c]) - cursors[c])
            out[got:got + take] = orders[c][cursors[c]:cursors[c] + take]
            cursors[c] += take
            got += take
            if cursors[c] == len(orders[c]):
                orders[c] = rng.permutation(per_class[c])
                cursors[c] = 0
        return out

    largest = max(range(n_classes), key=lambda c: len(per_class[c]))
    n_batches = math.ceil(len(per_class[largest]) / quota[largest])

    batches = []
    for _ in range(n_batches):
        batch = np.concatenate([draw(c, int(quota[c])) for c in range(n_classes)])
        rng.shuffle(batch)
        batches.append(batch.tolist())
    return batches


def shuffled_batches(n: int, batch_size: int, seed: int) -> list[list[int]]:
    """Plain shuffled coverage of all n samples."""
    order = np.random.default_rng(seed).permutation(n)
    return [order[i:i + batch_size].tolist() for i in range(0, n, batch_size)]


def compute_loss(kind: str, predictions: torch.Tensor, targets) -> torch.Tensor:
    """Mean loss over a batch for the three task kinds."""
    if kind not in LOSS_KINDS:
        raise InvalidConfig(f"unknown loss {kind!r}")
    preds = predictions if predictions.dim() > 0 else predictions.unsqueeze(0)
    if kind == "cross_entropy":
        if preds.dim() == 1:
            preds = preds.unsqueeze(0)
        t = torch.as_tensor(targets, dtype=torch.long).reshape(-1)
        if preds.shape[0] != t.shape[0]:
            raise ShapeMismatch(f"{preds.shape[0]} predictions vs {t.shape[0]} targets")
        return F.cross_entropy(preds, t)
    t = torch.as_tensor(targets, dtype=preds.dtype).reshape(-1)
    p = preds.reshape(-1)
    if p.shape[0] != t.shape[0]:
        raise ShapeMismatch(f"{p.shape[0]} predictions vs {t.shape[0]} targets")
    if kind == "binary_cross_entropy":
        return F.binary_cross_entropy_with_logits(p, t)
    return F.mse_loss(p, t)


def _as_tensor_list(sequences) -> list[torch.Tensor]:
    return [torch.as_tensor(np.asarray(s), dtype=torch.float32) for s in sequences]


def collate(sequences: list[torch.Tensor], indices) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad selected sequences to a common length; returns (batch, lengths)."""
    chosen = [sequences[i] for i in indices]
    lengths = torch.tensor([s.shape[0] for s in chosen], dtype=torch.long)
    max_len = int(lengths.max())
    width = chosen[0].shape[1]
    batch = torch.zeros(len(chosen), max_len, width, dtype=torch.float32)
    for row, s in enumerate(chosen):
        batch[row, :s.shape[0]] = s
    return batch, lengths


def predict_outputs(model: EngagementModel, sequences, batch_size: int = 64) -> np.ndarray:
    """Inference-mode head outputs, (n, output_dim)."""
    seqs = _as_tensor_list(sequences)
    model.eval()
    outs = []
    with torch.no_grad():
        for start in range(0, len(seqs), batch_size):
            idx = range(start, min(start + batch_size, len(seqs)))
            batch, lengths = collate(seqs, idx)
            out = model(batch, lengths=lengths)
            outs.append(out.reshape(len(lengths), -1).numpy())
    return np.concatenate(outs, axis=0)


def _validation_metric(model, sequences, targets, loss_kind: str) -> tuple[str, float]:
    outputs = predict_outputs(model, sequences)
    if loss_kind == "cross_entropy":
        return "accuracy", float((outputs.argmax(axis=1) == np.asarray(targets)).mean())
    if loss_kind == "binary_cross_entropy":
        pred = (outputs.reshape(-1) > 0).astype(np.int64)
        truth = np.asarray(targets).astype(np.int64).reshape(-1)
        return "accuracy", float((pred == truth).mean())
    diff = outputs.reshape(-1) - np.asarray(targets, dtype=np.float64)
    return "mse", float(np.mean(diff ** 2))


def fit(model: EngagementModel, train_sequences, train_targets,
        val_sequences, val_targets, config: TrainConfig,
        class_labels=None) -> tuple[EngagementModel, TrainHistory]:
    """Train with Adam, restoring the parameters of the best validation epoch.

    ``class_labels`` supplies the integer classes used for balanced batching
    when the loss targets are not themselves class indices (binary threshold
    targets, regression values). Without them, balanced batching falls back
    to plain shuffling for regression.
    """
    if len(val_sequences) == 0:
        raise InvalidConfig("validation set must be non-empty")
    train_seqs = _as_tensor_list(train_sequences)
    if len(train_seqs) == 0:
        raise InvalidConfig("training set must be non-empty")

    torch.manual_seed(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                 betas=config.betas)

    if config.loss == "cross_entropy":
        target_tensor = torch.as_tensor(np.asarray(train_targets), dtype=torch.long)
    else:
        target_tensor = torch.as_tensor(np.asarray(train_targets), dtype=torch.float32)

    if class_labels is None and config.loss != "mean_squared_error":
        derived = np.asarray(train_targets)
        if derived.ndim == 1:
            class_labels = derived.astype(np.int64)

    history = TrainHistory()
    higher_is_better = config.loss != "mean_squared_error"
    best_metric = -np.inf if higher_is_better else np.inf
    best_state = copy.deepcopy(model.state_dict())
    best_epoch = 0

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        if config.balanced_batching and class_labels is not None:
            batches = balanced_batches(class_labels, config.batch_size,
                                       seed=config.seed + epoch)
        else:
            batches = shuffled_batches(len(train_seqs), config.batch_size,
                                       seed=config.seed + epoch)

        model.train()
        epoch_loss = 0.0
        n_samples = 0
        for batch_idx in batches:
            batch, lengths = collate(train_seqs, batch_idx)
            outputs = model(batch, lengths=lengths)
            loss = compute_loss(config.loss, outputs, target_tensor[batch_idx])
            if not torch.isfinite(loss):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach()) * len(batch_idx)
            n_samples += len(batch_idx)
        model.eval()

        metric_name, metric = _validation_metric(model, val_sequences,
                                                 val_targets, config.loss)
        history.metric_name = metric_name
        history.train_loss.append(epoch_loss / n_samples)
        history.val_metric.append(metric)
        history.epoch_seconds.append(time.perf_counter() - t0)

        improved = metric > best_metric if higher_is_better else metric < best_metric
        if improved:
            best_metric = metric
            best_epoch = epoch
            best_state = copy.deepcopy(model.state_dict())
        elif epoch - best_epoch >= config.patience:
            break

    model.load_state_dict(best_state)
    model.eval()
    history.best_epoch = best_epoch
    return model, history


def write_run_dir(run_dir, config_doc: dict, history: TrainHistory) -> None:
    """Emit the run directory contract: config snapshot and history table."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(config_doc, indent=2,
                                                    sort_keys=True) + "\n")
    history.write_csv(run_dir / "history.csv")
