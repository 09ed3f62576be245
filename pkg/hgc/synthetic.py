"""
Synthetic dataset

A small four-class cube with one class per image quadrant and well separated
class spectra, used for smoke runs and end-to-end tests.
"""

import logging
import os
from typing import Tuple

import numpy as np

from hgc import constants, utils
from hgc.hsi_io import HsiCube, LabelMap, save_cube, save_labels


def class_spectrum(class_index: int, bands: int) -> np.ndarray:
    """Prototype spectrum of class index 0..C-1."""
    b = np.arange(bands, dtype=np.float64)
    return 2.0 + 3.0 * class_index + 0.5 * np.sin(b * (class_index + 1) / 3.0)


def quadrant_labels(width: int, height: int) -> np.ndarray:
    """Classes 1..4 for the top-left, top-right, bottom-left, bottom-right quadrants."""
    rows = (np.arange(height) >= height // 2).astype(np.int64)
    cols = (np.arange(width) >= width // 2).astype(np.int64)
    return 1 + 2 * rows[:, None] + cols[None, :]


def make_synthetic(seed: int = 0) -> Tuple[HsiCube, LabelMap]:
    """Build the quadrant cube with Gaussian noise on every band."""
    width, height = constants.SYNTHETIC_WIDTH, constants.SYNTHETIC_HEIGHT
    bands = constants.SYNTHETIC_BANDS
    labels = quadrant_labels(width, height)
    prototypes = np.stack(
        [class_spectrum(c, bands) for c in range(constants.SYNTHETIC_CLASSES)]
    )
    rng = np.random.default_rng(seed)
    pixels = prototypes[labels.ravel() - 1]
    pixels = pixels + rng.normal(0.0, constants.SYNTHETIC_NOISE, size=pixels.shape)
    cube = HsiCube.from_pixels(pixels.astype(np.float32), width, height)
    return cube, LabelMap(width=width, height=height, labels=labels)


def write_synthetic(directory: str, seed: int = 0) -> str:
    """Write the cube, its labels and a ready-to-run config file.

    Returns:
        str: Path of the config file.
    """
    utils.ensure_dir(directory)
    cube, labels = make_synthetic(seed)
    name = constants.SYNTHETIC_NAME
    header = save_cube(cube, os.path.join(directory, name))
    labels_name = name + constants.LABELS_TEXT_SUFFIX
    save_labels(labels, os.path.join(directory, labels_name))

    config_path = os.path.join(directory, name + ".cfg")
    lines = [
        "# Synthetic quadrant dataset.",
        f"cube = {os.path.basename(header)}",
        f"labels = {labels_name}",
        f"pca_dim = {cube.bands}",
        "epochs = 200",
    ]
    utils.atomic_write(config_path, "\n".join(lines) + "\n")
    logging.info("Wrote synthetic dataset to %s", directory)
    return config_path
