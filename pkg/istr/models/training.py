import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from istr.autograd import ops
from istr.autograd.optim import SGD
from istr.autograd.tensor import Tape, Tensor, backprop
from istr.data_models import Dataset
from istr.errors import ArgumentError
from istr.models.network import Model

logger = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float
    heldout_accuracy: Optional[float] = None


@dataclass
class TrainHistory:
    epochs: List[EpochStats] = field(default_factory=list)

    @property
    def accuracies(self) -> List[float]:
        return [e.train_accuracy for e in self.epochs]

    @property
    def losses(self) -> List[float]:
        return [e.loss for e in self.epochs]

    def to_dict(self) -> List[dict]:
        return [vars(e).copy() for e in self.epochs]


@dataclass
class Evaluation:
    accuracy: float
    confusion: np.ndarray


def _check_dataset(model: Model, dataset: Dataset) -> None:
    if len(dataset) == 0:
        raise ArgumentError("dataset is empty")
    if dataset.labels.max() >= model.class_count:
        raise ArgumentError(f"labels exceed the model's {model.class_count} classes")


def train(
    model: Model,
    dataset: Dataset,
    epochs: int,
    lr: float = 0.05,
    batch_size: int = 64,
    seed: int = 0,
    momentum: float = 0.9,
    heldout: Optional[Dataset] = None,
) -> Tuple[Model, TrainHistory]:
    """Mini-batch SGD on softmax cross-entropy; updates ``model`` in place.

    Shuffling draws from ``seed`` only, so two runs with the same seed end
    with identical parameters. Once trained, ``model.seed`` is the last
    training seed; the init seed and every training seed are kept in
    ``model.metadata`` so a checkpoint names what reproduces its weights.
    """
    _check_dataset(model, dataset)
    if epochs < 0:
        raise ArgumentError(f"epochs must be non-negative, got {epochs}")
    history = TrainHistory()
    if epochs == 0:
        return model, history

    model.metadata.setdefault("init_seed", str(model.seed))
    seeds = [s for s in model.metadata.get("train_seeds", "").split(",") if s]
    model.metadata["train_seeds"] = ",".join(seeds + [str(seed)])
    model.seed = seed
    rng = np.random.default_rng(seed)
    opt = SGD(model.parameters(), lr, momentum)
    n = len(dataset)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            labels = dataset.labels[idx]
            with Tape() as tape:
                logits = model.forward(Tensor(dataset.images[idx]))
                loss = ops.softmax_cross_entropy(logits, labels)
            backprop(tape, loss)
            opt.step()
            total_loss += loss.item() * len(idx)
            correct += int((logits.data.argmax(axis=1) == labels).sum())
        stats = EpochStats(epoch, total_loss / n, correct / n)
        if heldout is not None:
            stats.heldout_accuracy = evaluate(model, heldout).accuracy
        history.epochs.append(stats)
        model.epochs += 1
        logger.info(
            "epoch %d/%d loss %.4f train acc %.4f%s", epoch, epochs, stats.loss, stats.train_accuracy,
            "" if stats.heldout_accuracy is None else f" heldout acc {stats.heldout_accuracy:.4f}",
        )
    return model, history


def evaluate(model: Model, dataset: Dataset, batch_size: int = 256) -> Evaluation:
    """Accuracy and confusion matrix (rows: true class, columns: prediction)."""
    _check_dataset(model, dataset)
    predictions = model.classify(dataset.images, batch_size)
    c = model.class_count
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, predictions), 1)
    accuracy = float(np.trace(confusion)) / len(dataset)
    return Evaluation(accuracy, confusion)
