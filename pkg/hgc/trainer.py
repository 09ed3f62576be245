"""
Cluster-batched training

Each step samples one sub-graph, scores the summed cross-entropy over its
train-labeled nodes and applies one Adam update to the parameters shared by
all sub-graphs. After every epoch the model is scored on the train and
validation nodes and the best validation epoch is kept.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from tqdm import tqdm  # type: ignore

from hgc import constants, gcn, utils
from hgc.hsi_io import RunConfig
from hgc.partition import SubGraph


@dataclass
class TrainHistory:
    """Per-epoch mean train loss, train accuracy and validation OA.

    Accuracies are None for epochs where no node carries that role.
    """

    loss: List[float] = field(default_factory=list)
    train_accuracy: List[Optional[float]] = field(default_factory=list)
    val_accuracy: List[Optional[float]] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def epochs(self) -> int:
        return len(self.loss)


def training_seeds(seed: int) -> Tuple[int, int]:
    """Independent seeds for model initialisation and sub-graph sampling."""
    init_seq, sample_seq = np.random.SeedSequence(seed).spawn(2)
    return int(init_seq.generate_state(1)[0]), int(sample_seq.generate_state(1)[0])


def infer_num_classes(subgraphs: List[SubGraph]) -> int:
    """Largest class id carried by any node label of any sub-graph."""
    largest = 0
    for subgraph in subgraphs:
        if subgraph.labels is None:
            continue
        for role in ("train", "val", "test"):
            values = subgraph.labels.role(role)
            if values.size:
                largest = max(largest, int(values.max()))
    return largest


def evaluate_epoch(
    model: gcn.GcnModel, subgraphs: List[SubGraph], role: str
) -> Optional[float]:
    """Fraction of the role-labeled nodes predicted correctly.

    Returns None when no node carries the role.

    Raises:
        ValueError: If role is not "train" or "val".
    """
    if role not in ("train", "val"):
        raise ValueError(f"Can only evaluate train or val nodes, got {role!r}")
    correct = 0
    total = 0
    for subgraph in subgraphs:
        if not subgraph.has_role(role):
            continue
        truth = subgraph.labels.role(role)  # type: ignore
        selected = truth > 0
        predicted = gcn.predict(model, subgraph.A_norm, subgraph.X)
        correct += int(np.sum(predicted[selected] == truth[selected]))
        total += int(np.sum(selected))
    if total == 0:
        return None
    return correct / total


def train(
    subgraphs: List[SubGraph],
    config: RunConfig,
    seed: int,
    num_classes: Optional[int] = None,
) -> Tuple[gcn.GcnModel, gcn.AdamState, TrainHistory]:
    """Train the shared model over the sub-graphs.

    Runs config.epochs epochs of 5 * len(subgraphs) steps. Sub-graphs with no
    train-labeled node are redrawn without consuming a step.

    Args:
        subgraphs (List[SubGraph]): Sub-graphs carrying node labels.
        config (RunConfig): Epochs, learning rate and layer widths.
        seed (int): Seed for initialisation and sampling.
        num_classes (Optional[int]): Output classes. Inferred from the node
            labels when omitted.

    Raises:
        ValueError: If no sub-graph holds a train-labeled node.

    Returns:
        Tuple[gcn.GcnModel, gcn.AdamState, TrainHistory]: The best-validation
        model, the Adam state it was reached with and the training history.
    """
    trainable = [s for s in subgraphs if s.has_role("train")]
    if not trainable:
        raise ValueError("No sub-graph holds a train-labeled node.")
    if num_classes is None:
        num_classes = infer_num_classes(subgraphs)

    init_seed, sample_seed = training_seeds(seed)
    dims = (
        subgraphs[0].X.shape[1],
        config.conv_dim,
        config.hidden_units,
        num_classes,
    )
    model = gcn.init_model(dims, init_seed)
    state = gcn.AdamState.for_model(model)
    rng = np.random.default_rng(sample_seed)
    steps = constants.STEPS_PER_CLUSTER * len(subgraphs)
    logging.info(
        "Training dims %s on %s sub-graphs: %s epochs of %s steps, lr %s.",
        dims,
        len(subgraphs),
        config.epochs,
        steps,
        config.learning_rate,
    )

    history = TrainHistory()
    best_model = model.copy()
    best_state = state.copy()
    best_score: Optional[float] = None
    for epoch in tqdm(range(config.epochs), desc="Training"):
        losses = []
        for _ in range(steps):
            subgraph = subgraphs[int(rng.integers(len(subgraphs)))]
            while not subgraph.has_role("train"):
                subgraph = subgraphs[int(rng.integers(len(subgraphs)))]
            labels = subgraph.labels.train  # type: ignore
            cache = gcn.forward(model, subgraph.A_norm, subgraph.X)
            losses.append(gcn.loss(cache.probs, labels))
            grads = gcn.backward(cache, model, subgraph.A_norm, subgraph.X, labels)
            gcn.adam_step(model, grads, state, config.learning_rate)

        train_accuracy = evaluate_epoch(model, subgraphs, "train")
        val_accuracy = evaluate_epoch(model, subgraphs, "val")
        history.loss.append(float(np.mean(losses)))
        history.train_accuracy.append(train_accuracy)
        history.val_accuracy.append(val_accuracy)

        # Without validation nodes the train accuracy picks the checkpoint.
        score = val_accuracy if val_accuracy is not None else train_accuracy
        if score is not None and (best_score is None or score > best_score):
            best_score = score
            best_model = model.copy()
            best_state = state.copy()
            history.best_epoch = epoch
        logging.debug(
            "Epoch %s: loss %.6f, train %s, val %s.",
            epoch,
            history.loss[-1],
            train_accuracy,
            val_accuracy,
        )

    if history.best_epoch < 0:
        history.best_epoch = config.epochs - 1
        best_model = model.copy()
        best_state = state.copy()
    logging.info(
        "Best epoch %s with validation OA %s.",
        history.best_epoch,
        history.val_accuracy[history.best_epoch] if history.epochs else None,
    )
    return best_model, best_state, history


##
# Artifacts:
##


def _cell(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_history_csv(history: TrainHistory, path: str) -> None:
    """Columns epoch, loss, train_acc, val_oa, best (1 on the kept epoch)."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["epoch", "loss", "train_acc", "val_oa", "best"])
    for epoch in range(history.epochs):
        writer.writerow(
            [
                epoch,
                _cell(history.loss[epoch]),
                _cell(history.train_accuracy[epoch]),
                _cell(history.val_accuracy[epoch]),
                int(epoch == history.best_epoch),
            ]
        )
    utils.atomic_write(path, buffer.getvalue())


def read_history_csv(path: str) -> TrainHistory:
    history = TrainHistory()
    with open(path, "r", encoding="utf-8", newline="") as openfile:
        for row in csv.DictReader(openfile):
            history.loss.append(float(row["loss"]))
            history.train_accuracy.append(
                float(row["train_acc"]) if row["train_acc"] else None
            )
            history.val_accuracy.append(float(row["val_oa"]) if row["val_oa"] else None)
            if row["best"] == "1":
                history.best_epoch = int(row["epoch"])
    return history
