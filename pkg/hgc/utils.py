"""
HGC utility functions

utility functions used across the HGC package
"""

import logging
import os
from hashlib import md5
from io import BytesIO
from pathlib import Path
from typing import Dict, Union

import numpy as np

from hgc import constants


def hash_file(path: str, blocksize: int = 65536) -> str:
    """Calculate the MD5 hash of a given file

    Args:
        path (str): Path to the file to be hashed.
        blocksize (int, optional): Memory size to read in the file. Defaults to 65536.

    Returns:
        str: The HEX digest hash of the given file
    """

    hasher = md5()

    # Read the file in blocks.
    with open(path, "rb") as openfile:
        buf = openfile.read(blocksize)
        while len(buf) > 0:
            hasher.update(buf)
            buf = openfile.read(blocksize)

    return hasher.hexdigest()


def atomic_write(path: str, content: Union[str, bytes]) -> None:
    """Write a file atomically: write a temporary sibling, then rename it.

    Args:
        path (str): Destination path.
        content (Union[str, bytes]): Text (written as UTF-8) or raw bytes.
    """
    ensure_dir(os.path.dirname(path))
    tmp_path = path + constants.TEMP_SUFFIX
    if isinstance(content, str):
        content = content.encode("utf-8")
    with open(tmp_path, "wb") as openfile:
        openfile.write(content)
    os.replace(tmp_path, path)
    logging.debug("Wrote %s bytes to %s", len(content), path)


def ensure_dir(directory: str) -> None:
    """Create a directory (and parents) if it does not already exist.

    Args:
        directory (str): Directory path. An empty string is a no-op.
    """
    if directory and not os.path.isdir(directory):
        Path(directory).mkdir(parents=True, exist_ok=True)
        logging.info("Created directory at %s", directory)


def worker_count(num_jobs: int) -> int:
    """Number of sweep workers, bounded by the HGC_THREADS environment variable.

    Args:
        num_jobs (int): Number of independent jobs.

    Raises:
        ValueError: If HGC_THREADS is not a positive integer.

    Returns:
        int: Worker count in 1..num_jobs.
    """
    env = os.environ.get(constants.ENV_THREADS)
    if env is None:
        limit = os.cpu_count() or 1
    else:
        try:
            limit = int(env)
        except ValueError as e:
            msg = f"{constants.ENV_THREADS} must be an integer, got {env!r}"
            raise ValueError(msg) from e
        if limit < 1:
            raise ValueError(f"{constants.ENV_THREADS} must be positive, got {limit}")
    return max(1, min(limit, num_jobs))


def save_arrays(path: str, **arrays: np.ndarray) -> None:
    """Write named arrays to an `.npz` archive atomically."""
    buffer = BytesIO()
    np.savez(buffer, **arrays)
    atomic_write(path, buffer.getvalue())


def load_arrays(path: str) -> Dict[str, np.ndarray]:
    """Read every array of an `.npz` archive.

    Raises:
        FileNotFoundError: If the archive is missing.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Artifact not found: {path}")
    with open(path, "rb") as openfile:
        buffer = BytesIO(openfile.read())
    with np.load(buffer, allow_pickle=False) as archive:
        return {name: archive[name] for name in archive.files}


def write_ppm(rgb: np.ndarray, path: str) -> None:
    """Write an (H, W, 3) uint8 image as binary PPM (P6)."""
    height, width, channels = rgb.shape
    if channels != 3:
        raise ValueError(f"PPM needs 3 channels, got {channels}")
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    atomic_write(path, header + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Read a binary PPM (P6, maxval 255) written by `write_ppm`.

    Raises:
        ValueError: If the file is not a P6 image of the declared size.
    """
    with open(path, "rb") as openfile:
        raw = openfile.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P6":
        raise ValueError(f"Not a binary PPM file: {path}")
    width, height, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"Unsupported PPM maxval {maxval} in {path}")
    # Exactly one whitespace byte separates the header from the pixels.
    header_len = len(raw) - width * height * 3
    pixels = np.frombuffer(raw[header_len:], dtype=np.uint8)
    if header_len <= 0 or pixels.size != width * height * 3:
        raise ValueError(f"PPM payload length mismatch in {path}")
    return pixels.reshape(height, width, 3)


def save_npy(path: str, array: np.ndarray) -> None:
    """Write a single array in `.npy` format atomically."""
    buffer = BytesIO()
    np.save(buffer, array, allow_pickle=False)
    atomic_write(path, buffer.getvalue())


def load_npy(path: str) -> np.ndarray:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Artifact not found: {path}")
    return np.load(path, allow_pickle=False)
