"""
Superpixels

SLIC-style clustering of the PCA-reduced cube into spatially contiguous
superpixels, per-superpixel mean attributes, and propagation of pixel labels
to superpixel nodes.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from hgc import constants, utils
from hgc.hsi_io import DatasetSplit, HsiCube, LabelMap, save_labels


@dataclass(frozen=True)
class SuperpixelMap:
    """Pixel to superpixel assignment, shape (height, width), ids 0..p-1."""

    width: int
    height: int
    assignment: np.ndarray

    @property
    def p(self) -> int:
        return int(self.assignment.max()) + 1

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.assignment.ravel(), minlength=self.p)

    def flat(self) -> np.ndarray:
        return self.assignment.ravel()


@dataclass(frozen=True)
class NodeLabels:
    """Per-superpixel train/val/test class ids (0 = none) and impurity flags."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    impure: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.train.size

    def role(self, name: str) -> np.ndarray:
        if name not in ("train", "val", "test"):
            raise ValueError(f"Unknown label role {name!r}")
        return getattr(self, name)

    def subset(self, nodes: np.ndarray) -> "NodeLabels":
        return NodeLabels(
            train=self.train[nodes],
            val=self.val[nodes],
            test=self.test[nodes],
            impure=self.impure[nodes],
        )


def segment(
    reduced: HsiCube,
    p_target: int,
    compactness: float = constants.DEFAULT_COMPACTNESS,
    iters: int = constants.DEFAULT_SLIC_ITERS,
    seed: int = 0,
) -> SuperpixelMap:
    """Cluster pixels into contiguous superpixels.

    Grid-seeded SLIC over the reduced spectrum with joint distance
    sqrt(d_spec^2 + compactness^2 * (d_xy / S)^2), S = sqrt(W*H / p_target),
    each centre searching a 2S x 2S window. Disconnected fragments are split
    off and segments smaller than a quarter of the nominal size are absorbed
    into their largest adjacent superpixel.

    The grid seeding consumes no randomness; `seed` is accepted so that every
    stage has the same calling convention and is logged for provenance.

    Args:
        reduced (HsiCube): PCA-reduced cube.
        p_target (int): Target superpixel count.
        compactness (float): Spatial weight.
        iters (int): Assignment/update iterations.
        seed (int): Run seed.

    Raises:
        ValueError: On non-positive parameters or p_target above the pixel count.

    Returns:
        SuperpixelMap: Contiguous superpixels relabelled 0..p-1 in raster order.
    """
    if p_target < 1:
        raise ValueError(f"p_target must be >= 1, got {p_target}")
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    if p_target > reduced.num_pixels:
        raise ValueError(
            f"p_target {p_target} exceeds the pixel count {reduced.num_pixels}"
        )

    width, height = reduced.width, reduced.height
    features = reduced.pixels().reshape(height, width, reduced.bands)
    step = math.sqrt(width * height / p_target)
    spatial_weight = (compactness / step) ** 2

    cy, cx, labels = _grid_centers(width, height, step)
    iy = np.clip(np.floor(cy + 0.5).astype(int), 0, height - 1)
    ix = np.clip(np.floor(cx + 0.5).astype(int), 0, width - 1)
    cf = features[iy, ix].copy()
    yy, xx = np.mgrid[0:height, 0:width]
    logging.debug("SLIC: %s grid centres, step %.3f, seed %s", cy.size, step, seed)

    for _ in range(iters):
        dist = np.full((height, width), np.inf)
        for k in range(cy.size):
            y0 = max(0, int(math.floor(cy[k] - step)))
            y1 = min(height, int(math.ceil(cy[k] + step)) + 1)
            x0 = max(0, int(math.floor(cx[k] - step)))
            x1 = min(width, int(math.ceil(cx[k] + step)) + 1)
            window = features[y0:y1, x0:x1]
            d2 = np.sum((window - cf[k]) ** 2, axis=-1) + spatial_weight * (
                (yy[y0:y1, x0:x1] - cy[k]) ** 2 + (xx[y0:y1, x0:x1] - cx[k]) ** 2
            )
            closer = d2 < dist[y0:y1, x0:x1]
            dist[y0:y1, x0:x1][closer] = d2[closer]
            labels[y0:y1, x0:x1][closer] = k

        flat = labels.ravel()
        counts = np.bincount(flat, minlength=cy.size)
        filled = counts > 0
        members = _indicator(flat, cy.size)
        cf[filled] = (members @ features.reshape(-1, reduced.bands))[filled] / counts[
            filled, None
        ]
        cy[filled] = (members @ yy.ravel().astype(float))[filled] / counts[filled]
        cx[filled] = (members @ xx.ravel().astype(float))[filled] / counts[filled]

    min_size = max(1, (width * height) // (4 * p_target))
    assignment = _relabel_raster(_enforce_connectivity(labels, min_size))
    result = SuperpixelMap(width=width, height=height, assignment=assignment)

    if not 0.5 * p_target <= result.p <= 1.5 * p_target:
        logging.warning(
            "Segmentation produced %s superpixels for a target of %s.",
            result.p,
            p_target,
        )
    logging.info("Segmented %sx%s image into %s superpixels.", width, height, result.p)
    return result


def _grid_centers(width: int, height: int, step: float) -> Tuple:
    nx = min(width, max(1, int(math.floor(width / step + 0.5))))
    ny = min(height, max(1, int(math.floor(height / step + 0.5))))
    xs = (np.arange(nx) + 0.5) * width / nx - 0.5
    ys = (np.arange(ny) + 0.5) * height / ny - 0.5
    cy, cx = (g.ravel().astype(float) for g in np.meshgrid(ys, xs, indexing="ij"))

    # Initial labels: the grid cell each pixel falls in.
    row_cell = np.minimum(ny - 1, np.arange(height) * ny // height)
    col_cell = np.minimum(nx - 1, np.arange(width) * nx // width)
    labels = (row_cell[:, None] * nx + col_cell[None, :]).astype(np.int64)
    return cy, cx, labels


def _indicator(flat: np.ndarray, rows: int) -> sp.csr_matrix:
    return sp.csr_matrix(
        (np.ones(flat.size), (flat, np.arange(flat.size))), shape=(rows, flat.size)
    )


def _enforce_connectivity(labels: np.ndarray, min_size: int) -> np.ndarray:
    out = labels.copy()
    next_label = int(out.max()) + 1

    # Every 4-connected fragment but the largest becomes its own segment.
    for lab in np.unique(labels):
        components, count = ndimage.label(labels == lab)
        if count <= 1:
            continue
        sizes = np.bincount(components.ravel())[1:]
        keep = int(np.argmax(sizes)) + 1
        for comp in range(1, count + 1):
            if comp != keep:
                out[components == comp] = next_label
                next_label += 1

    # Absorb orphans into their largest neighbour.
    sizes = np.bincount(out.ravel(), minlength=next_label)
    cross = ndimage.generate_binary_structure(2, 1)
    for lab in range(next_label):
        if sizes[lab] == 0 or sizes[lab] >= min_size:
            continue
        mask = out == lab
        border = ndimage.binary_dilation(mask, structure=cross) & ~mask
        neighbours = np.unique(out[border])
        if neighbours.size == 0:
            continue
        target = int(neighbours[np.argmax(sizes[neighbours])])
        out[mask] = target
        sizes[target] += sizes[lab]
        sizes[lab] = 0
    return out


def _relabel_raster(labels: np.ndarray) -> np.ndarray:
    _, first, inverse = np.unique(
        labels.ravel(), return_index=True, return_inverse=True
    )
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first)] = np.arange(first.size)
    return rank[inverse].reshape(labels.shape)


def check_connectivity(smap: SuperpixelMap) -> bool:
    """Whether every superpixel is one non-empty 4-connected component."""
    if np.any(smap.sizes == 0):
        return False
    for lab in range(smap.p):
        _, count = ndimage.label(smap.assignment == lab)
        if count != 1:
            return False
    return True


def compute_attributes(smap: SuperpixelMap, reduced: HsiCube) -> np.ndarray:
    """Mean feature vector of each superpixel (p x F).

    Raises:
        ValueError: On a dimension mismatch or an empty superpixel.
    """
    if (smap.width, smap.height) != (reduced.width, reduced.height):
        raise ValueError(
            f"Superpixel map is {smap.width}x{smap.height} but the cube is "
            f"{reduced.width}x{reduced.height}"
        )
    sizes = smap.sizes
    if np.any(sizes == 0):
        empty = np.flatnonzero(sizes == 0).tolist()
        raise ValueError(f"Empty superpixels: {empty}")
    sums = _indicator(smap.flat(), smap.p) @ reduced.pixels()
    return sums / sizes[:, None]


def aggregate_labels(
    smap: SuperpixelMap, split: DatasetSplit, labels: LabelMap
) -> NodeLabels:
    """Propagate split pixel labels to superpixel nodes by majority vote.

    Ties go to the smallest class id. A superpixel whose train pixels span
    more than one class is flagged impure.

    Raises:
        ValueError: If a split pixel lies outside the image.
    """
    flat_labels = labels.flat()
    num_classes = labels.num_classes
    assignment = smap.flat()

    def vote(pixels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        pixels = np.asarray(pixels, dtype=np.int64)
        if pixels.size and (pixels.min() < 0 or pixels.max() >= assignment.size):
            raise ValueError("Split pixel index outside the image.")
        counts = np.zeros((smap.p, num_classes + 1), dtype=np.int64)
        np.add.at(counts, (assignment[pixels], flat_labels[pixels]), 1)
        per_class = counts[:, 1:]
        winner = np.argmax(per_class, axis=1) + 1 if num_classes else np.zeros(smap.p)
        winner = np.where(per_class.sum(axis=1) > 0, winner, 0).astype(np.int64)
        return winner, per_class

    train, train_counts = vote(split.all_train())
    val, _ = vote(split.all_val())
    test, _ = vote(split.test_pixels)
    impure = (train_counts > 0).sum(axis=1) > 1
    if impure.any():
        logging.warning(
            "%s superpixels hold train pixels of several classes.", impure.sum()
        )
    logging.info(
        "Node labels: %s train, %s validation, %s test superpixels.",
        np.count_nonzero(train),
        np.count_nonzero(val),
        np.count_nonzero(test),
    )
    return NodeLabels(train=train, val=val, test=test, impure=impure)


##
# Artifacts:
##


def save_segmentation(smap: SuperpixelMap, path: str) -> None:
    utils.save_arrays(path, assignment=smap.assignment)


def load_segmentation(path: str) -> SuperpixelMap:
    assignment = utils.load_arrays(path)["assignment"].astype(np.int64)
    height, width = assignment.shape
    return SuperpixelMap(width=width, height=height, assignment=assignment)


def save_node_labels(node_labels: NodeLabels, path: str) -> None:
    utils.save_arrays(
        path,
        train=node_labels.train,
        val=node_labels.val,
        test=node_labels.test,
        impure=node_labels.impure,
    )


def load_node_labels(path: str) -> NodeLabels:
    arrays: Dict[str, np.ndarray] = utils.load_arrays(path)
    return NodeLabels(
        train=arrays["train"].astype(np.int64),
        val=arrays["val"].astype(np.int64),
        test=arrays["test"].astype(np.int64),
        impure=arrays["impure"].astype(bool),
    )


def save_assignment_grid(smap: SuperpixelMap, path: str) -> None:
    """Dump the assignment in the label text format."""
    save_labels(LabelMap(smap.width, smap.height, smap.assignment), path)


def save_boundary_overlay(smap: SuperpixelMap, reduced: HsiCube, path: str) -> None:
    """Write the first reduced band as greyscale with superpixel borders marked."""
    band = reduced.data[0].astype(np.float64)
    span = band.max() - band.min()
    grey = np.zeros_like(band) if span == 0 else (band - band.min()) / span
    rgb = np.repeat((grey * 255).round().astype(np.uint8)[:, :, None], 3, axis=2)

    a = smap.assignment
    border = np.zeros(a.shape, dtype=bool)
    border[:, :-1] |= a[:, :-1] != a[:, 1:]
    border[:-1, :] |= a[:-1, :] != a[1:, :]
    rgb[border] = constants.BOUNDARY_RGB
    utils.write_ppm(rgb, path)
