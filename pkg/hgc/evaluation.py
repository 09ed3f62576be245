"""
Evaluation

Maps superpixel predictions back to pixels, scores the held-out test pixels
with overall accuracy, average accuracy and Cohen's kappa, and writes
classification maps and metric reports.
"""

import colorsys
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import sklearn.metrics as skmetrics

from hgc import constants, gcn, utils
from hgc.hsi_io import LabelMap
from hgc.partition import SubGraph
from hgc.superpixel import SuperpixelMap


@dataclass(frozen=True)
class ConfusionMatrix:
    """C x C counts, rows = ground truth class, columns = prediction."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class MetricsReport:
    """Single-trial scores. per_class_accuracy[i] is for class i + 1 and is
    None when that class has no evaluated pixel."""

    per_class_accuracy: List[Optional[float]]
    oa: float
    aa: float
    kappa: float
    support: List[int]

    @property
    def num_classes(self) -> int:
        return len(self.per_class_accuracy)


def predict_nodes(
    model: gcn.GcnModel, subgraphs: List[SubGraph], num_nodes: int
) -> np.ndarray:
    """Predicted class id for every superpixel node.

    Raises:
        RuntimeError: If a node belongs to no sub-graph.
    """
    node_class = np.zeros(num_nodes, dtype=np.int64)
    for subgraph in subgraphs:
        node_class[subgraph.nodes] = gcn.predict(model, subgraph.A_norm, subgraph.X)
    missing = np.flatnonzero(node_class == 0)
    if missing.size:
        raise RuntimeError(
            f"{missing.size} superpixels (first {missing[0]}) are in no sub-graph"
        )
    return node_class


def predict_pixels(
    model: gcn.GcnModel, subgraphs: List[SubGraph], smap: SuperpixelMap
) -> np.ndarray:
    """Every pixel gets the predicted class of its superpixel. Shape (H, W)."""
    return predict_nodes(model, subgraphs, smap.p)[smap.assignment]


def confusion(
    pred: np.ndarray,
    truth: LabelMap,
    eval_pixels: np.ndarray,
    num_classes: Optional[int] = None,
) -> ConfusionMatrix:
    """Tally predictions against ground truth over the evaluated pixels.

    Args:
        pred (np.ndarray): (H, W) predicted class ids.
        truth (LabelMap): Ground truth.
        eval_pixels (np.ndarray): Flat pixel indices (row * W + col).
        num_classes (Optional[int]): Matrix size. Defaults to the label map's.

    Raises:
        ValueError: If an evaluated pixel is unlabeled in the ground truth or
                    a prediction lies outside 1..C.
    """
    num_classes = num_classes or truth.num_classes
    eval_pixels = np.asarray(eval_pixels, dtype=np.int64)
    expected = truth.flat()[eval_pixels]
    predicted = np.asarray(pred).ravel()[eval_pixels]
    if np.any(expected == 0):
        raise ValueError(
            f"{int(np.sum(expected == 0))} evaluated pixels have no ground truth"
        )
    if np.any((predicted < 1) | (predicted > num_classes)):
        raise ValueError(f"Predictions outside class ids 1..{num_classes}")
    counts = skmetrics.confusion_matrix(
        expected, predicted, labels=np.arange(1, num_classes + 1)
    )
    return ConfusionMatrix(counts=counts.astype(np.int64))


def metrics(matrix: ConfusionMatrix) -> MetricsReport:
    """OA, per-class accuracy, AA and kappa, computed in exact fractions.

    Classes with no evaluated pixel are left out of AA with a warning.

    Raises:
        ValueError: If the matrix is empty.
    """
    counts = [[int(v) for v in row] for row in matrix.counts]
    total = matrix.total
    if total == 0:
        raise ValueError("Confusion matrix is empty")
    rows = [sum(row) for row in counts]
    cols = [sum(col) for col in zip(*counts)]

    oa = Fraction(sum(counts[i][i] for i in range(len(counts))), total)
    per_class: List[Optional[Fraction]] = []
    for i, row_total in enumerate(rows):
        if row_total == 0:
            logging.warning("Class %s has no evaluated pixels, left out of AA.", i + 1)
            per_class.append(None)
        else:
            per_class.append(Fraction(counts[i][i], row_total))
    present = [acc for acc in per_class if acc is not None]
    aa = sum(present, Fraction(0)) / len(present)
    chance = Fraction(sum(r * c for r, c in zip(rows, cols)), total * total)
    kappa = Fraction(1) if chance == 1 else (oa - chance) / (1 - chance)

    return MetricsReport(
        per_class_accuracy=[None if acc is None else float(acc) for acc in per_class],
        oa=float(oa),
        aa=float(aa),
        kappa=float(kappa),
        support=rows,
    )


def mean_std(values: Sequence[float]) -> Tuple[float, float]:
    """Mean and population standard deviation."""
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ValueError("Cannot summarise an empty sequence")
    return float(array.mean()), float(array.std(ddof=0))


##
# Classification maps:
##


def default_palette(num_classes: int) -> Dict[int, Tuple[int, int, int]]:
    """Fixed colours for classes 1..16, evenly spread hues beyond that."""
    palette = {}
    for class_id in range(1, num_classes + 1):
        if class_id in constants.DEFAULT_PALETTE:
            palette[class_id] = constants.DEFAULT_PALETTE[class_id]
        else:
            hue = (class_id * 0.618033988749895) % 1.0
            rgb = colorsys.hsv_to_rgb(hue, 0.8, 0.9)
            palette[class_id] = tuple(int(round(255 * v)) for v in rgb)  # type: ignore
    return palette


def render_map(
    pred: np.ndarray, palette: Dict[int, Tuple[int, int, int]]
) -> np.ndarray:
    """(H, W) class ids to an (H, W, 3) uint8 image; 0 is black.

    Raises:
        ValueError: If a class id present has no palette entry.
    """
    pred = np.asarray(pred)
    rgb = np.zeros(pred.shape + (3,), dtype=np.uint8)
    rgb[pred == 0] = constants.UNLABELED_RGB
    for class_id in np.unique(pred):
        if class_id == 0:
            continue
        if int(class_id) not in palette:
            raise ValueError(f"No palette colour for class {int(class_id)}")
        rgb[pred == class_id] = palette[int(class_id)]
    return rgb


def export_map(
    pred: np.ndarray, palette: Dict[int, Tuple[int, int, int]], path: str
) -> None:
    """Write the classification map as a binary PPM."""
    utils.write_ppm(render_map(pred, palette), path)


##
# Reports:
##


def _class_label(index: int, class_names: Optional[List[str]]) -> str:
    if class_names and index < len(class_names):
        return class_names[index]
    return f"class {index + 1}"


def report_to_dict(
    report: MetricsReport, class_names: Optional[List[str]] = None
) -> Dict:
    return {
        "oa": report.oa,
        "aa": report.aa,
        "kappa": report.kappa,
        "per_class": [
            {
                "class_id": i + 1,
                "name": _class_label(i, class_names),
                "accuracy": acc,
                "support": report.support[i],
            }
            for i, acc in enumerate(report.per_class_accuracy)
        ],
    }


def report_from_dict(payload: Dict) -> MetricsReport:
    return MetricsReport(
        per_class_accuracy=[row["accuracy"] for row in payload["per_class"]],
        oa=payload["oa"],
        aa=payload["aa"],
        kappa=payload["kappa"],
        support=[row["support"] for row in payload["per_class"]],
    )


def write_metrics_json(
    report: MetricsReport, path: str, class_names: Optional[List[str]] = None
) -> None:
    text = json.dumps(report_to_dict(report, class_names), indent=2, sort_keys=True)
    utils.atomic_write(path, text + "\n")


def read_metrics_json(path: str) -> MetricsReport:
    with open(path, "r", encoding="utf-8") as openfile:
        return report_from_dict(json.load(openfile))


def _percent(value: Optional[float]) -> str:
    return "-" if value is None else f"{100.0 * value:.2f}"


def format_metrics_table(
    report: MetricsReport, class_names: Optional[List[str]] = None
) -> str:
    """Per-class rows with an OA / AA / Kappa footer, accuracies in percent."""
    names = [_class_label(i, class_names) for i in range(report.num_classes)]
    width = max([len(name) for name in names] + [len("Kappa"), len("Class")])
    lines = [f"{'Class':<{width}}  {'Support':>8}  {'Accuracy':>8}"]
    lines.append("-" * len(lines[0]))
    for i, name in enumerate(names):
        acc = report.per_class_accuracy[i]
        lines.append(f"{name:<{width}}  {report.support[i]:>8}  {_percent(acc):>8}")
    lines.append("-" * len(lines[0]))
    for label, value in (("OA", report.oa), ("AA", report.aa)):
        lines.append(f"{label:<{width}}  {'':>8}  {_percent(value):>8}")
    lines.append(f"{'Kappa':<{width}}  {'':>8}  {report.kappa:>8.4f}")
    return "\n".join(lines) + "\n"


def write_metrics_text(
    report: MetricsReport, path: str, class_names: Optional[List[str]] = None
) -> None:
    utils.atomic_write(path, format_metrics_table(report, class_names))
