"""
Spectral PCA

Principal component analysis of the band axis, applied once to the input
cube before segmentation and node attribute extraction.
"""

import json
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from hgc import constants, utils
from hgc.hsi_io import HsiCube


@dataclass(frozen=True)
class PcaModel:
    """Mean spectrum, d x B orthonormal components and their variances."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def bands(self) -> int:
        return self.components.shape[1]

    @property
    def dim(self) -> int:
        return self.components.shape[0]


def jacobi_eigh(
    matrix: np.ndarray,
    tol: float = constants.JACOBI_TOLERANCE,
    max_sweeps: int = constants.JACOBI_MAX_SWEEPS,
) -> Tuple[np.ndarray, np.ndarray]:
    """Eigen-decompose a symmetric matrix with cyclic Jacobi rotations.

    Sweeps stop once the off-diagonal Frobenius norm falls below
    tol * max(1, ||matrix||_F).

    Args:
        matrix (np.ndarray): Symmetric B x B matrix.
        tol (float): Relative convergence threshold.
        max_sweeps (int): Sweep limit.

    Raises:
        ValueError: If the matrix is not square and symmetric.
        RuntimeError: If the sweeps do not converge.

    Returns:
        Tuple[np.ndarray, np.ndarray]: Eigenvalues (unsorted) and the matrix
        whose columns are the matching eigenvectors.
    """
    a = np.array(matrix, dtype=np.float64)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T):
        raise ValueError("Jacobi eigendecomposition needs a symmetric matrix.")
    v = np.eye(n)
    threshold = tol * max(1.0, float(np.linalg.norm(a)))

    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(a**2) - np.sum(np.diag(a) ** 2))
        if off < threshold:
            logging.debug("Jacobi converged after %s sweeps.", sweep)
            return np.diag(a).copy(), v
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                # A <- J^T A J, applied to rows then columns p and q.
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                vec_p = v[:, p].copy()
                vec_q = v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q

    raise RuntimeError(
        f"Jacobi eigendecomposition did not converge in {max_sweeps} sweeps."
    )


def fit_pca(cube: HsiCube, d: int) -> PcaModel:
    """Fit the top-d principal components of the pixel spectra.

    The covariance is the population covariance (divided by the pixel count).
    Each component's largest-magnitude entry is made positive.

    Args:
        cube (HsiCube): Input cube.
        d (int): Retained components.

    Raises:
        ValueError: If d is out of range, there are too few pixels, or the
                    cube is constant.

    Returns:
        PcaModel: The fitted model.
    """
    if not 1 <= d <= cube.bands:
        raise ValueError(f"PCA dimension {d} must lie in 1..{cube.bands} (bands)")
    if cube.num_pixels < d + 1:
        raise ValueError(f"PCA needs at least {d + 1} pixels, got {cube.num_pixels}")

    pixels = cube.pixels()
    mean = pixels.mean(axis=0)
    centered = pixels - mean
    covariance = centered.T @ centered / pixels.shape[0]
    if not np.any(covariance):
        raise ValueError("Degenerate cube: zero covariance (all pixels identical).")

    eigenvalues, eigenvectors = jacobi_eigh(covariance)
    # Descending variance; stable so equal variances keep index order.
    order = np.argsort(-eigenvalues, kind="stable")[:d]
    components = eigenvectors[:, order].T.copy()
    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variances = np.maximum(eigenvalues[order], 0.0)

    logging.info(
        "PCA kept %s of %s bands, %.4f of total variance.",
        d,
        cube.bands,
        float(variances.sum() / np.trace(covariance)),
    )
    return PcaModel(mean=mean, components=components, explained_variance=variances)


def transform(cube: HsiCube, model: PcaModel) -> HsiCube:
    """Project every pixel: components . (x - mean).

    Raises:
        ValueError: If the cube band count differs from the model's.
    """
    if cube.bands != model.bands:
        raise ValueError(
            f"Band mismatch: cube has {cube.bands} bands, model expects {model.bands}"
        )
    reduced = (cube.pixels() - model.mean) @ model.components.T
    return HsiCube.from_pixels(reduced, cube.width, cube.height)


def inverse_transform(reduced: HsiCube, model: PcaModel) -> HsiCube:
    """Map reduced pixels back to the band space."""
    if reduced.bands != model.dim:
        raise ValueError(
            f"Dimension mismatch: cube has {reduced.bands} bands, model has {model.dim}"
        )
    pixels = reduced.pixels() @ model.components + model.mean
    return HsiCube.from_pixels(pixels, reduced.width, reduced.height)


def save_pca_model(model: PcaModel, path: str) -> None:
    """Dump a model as JSON for inspection."""
    payload = {
        "mean": model.mean.tolist(),
        "components": model.components.tolist(),
        "explained_variance": model.explained_variance.tolist(),
    }
    utils.atomic_write(path, json.dumps(payload) + "\n")


def load_pca_model(path: str) -> PcaModel:
    with open(path, "r", encoding="utf-8") as openfile:
        payload = json.load(openfile)
    return PcaModel(
        mean=np.array(payload["mean"], dtype=np.float64),
        components=np.array(payload["components"], dtype=np.float64),
        explained_variance=np.array(payload["explained_variance"], dtype=np.float64),
    )
