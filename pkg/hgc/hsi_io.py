"""
HSI input/output

Load and store hyperspectral cubes and ground-truth label maps, draw the
seeded labeled/validation/test split, and read run configurations.

A cube is stored as a JSON sidecar header plus a raw little-endian 32-bit
float payload, band-sequential and row-major within each band. Label maps
are plain-text grids (one row of space-separated integers per image row) or
PGM images.
"""

import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from hgc import constants, utils


@dataclass(frozen=True)
class HsiCube:
    """A W x H x B radiance cube. `data` has shape (bands, height, width)."""

    width: int
    height: int
    bands: int
    data: np.ndarray

    def __post_init__(self):
        expected = (self.bands, self.height, self.width)
        if self.data.shape != expected:
            raise ValueError(
                f"Cube data shape {self.data.shape} does not match {expected}."
            )
        if not np.all(np.isfinite(self.data)):
            raise ValueError("Cube holds non-finite values.")

    @property
    def num_pixels(self) -> int:
        return self.width * self.height

    def pixels(self) -> np.ndarray:
        """Pixel-major (W*H, B) float64 matrix; row index = row * width + col."""
        return self.data.reshape(self.bands, -1).T.astype(np.float64)

    @classmethod
    def from_pixels(cls, pixels: np.ndarray, width: int, height: int) -> "HsiCube":
        """Build a cube from a pixel-major (W*H, B) matrix."""
        bands = pixels.shape[1]
        data = np.ascontiguousarray(pixels.T.reshape(bands, height, width))
        return cls(width=width, height=height, bands=bands, data=data)


@dataclass(frozen=True)
class LabelMap:
    """Per-pixel class ids, 0 = unlabeled, 1..C = classes. Shape (height, width)."""

    width: int
    height: int
    labels: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def flat(self) -> np.ndarray:
        return self.labels.ravel()

    def labeled_pixels(self) -> np.ndarray:
        return np.flatnonzero(self.flat())

    def class_counts(self) -> Dict[int, int]:
        """Pixel count for every class id 1..C."""
        counts = np.bincount(self.flat(), minlength=self.num_classes + 1)
        return {c: int(counts[c]) for c in range(1, self.num_classes + 1)}


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/validation/test pixel indices (flat, row-major)."""

    train_pixels: Dict[int, np.ndarray]
    val_pixels: Dict[int, np.ndarray]
    test_pixels: np.ndarray
    seed: int

    def all_train(self) -> np.ndarray:
        return _concat_sorted(self.train_pixels)

    def all_val(self) -> np.ndarray:
        return _concat_sorted(self.val_pixels)


@dataclass(frozen=True)
class RunConfig:
    """All pipeline hyper-parameters plus the input paths."""

    cube: str = ""
    labels: str = ""
    preset: Optional[str] = None
    pca_dim: int = constants.DEFAULT_PCA_DIM
    num_superpixels: Optional[int] = None
    compactness: float = constants.DEFAULT_COMPACTNESS
    slic_iters: int = constants.DEFAULT_SLIC_ITERS
    o: int = constants.DEFAULT_O
    k: int = constants.DEFAULT_K
    c: int = constants.DEFAULT_C
    hidden_units: int = constants.DEFAULT_HIDDEN_UNITS
    conv_dim: int = constants.DEFAULT_CONV_DIM
    epochs: int = constants.DEFAULT_EPOCHS
    learning_rate: float = constants.DEFAULT_LEARNING_RATE
    seed: int = constants.DEFAULT_SEED
    per_class: int = constants.DEFAULT_PER_CLASS
    per_class_small: int = constants.DEFAULT_PER_CLASS_SMALL
    val_fraction: float = constants.DEFAULT_VAL_FRACTION
    balance_eps: float = constants.DEFAULT_BALANCE_EPS
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        """Check every numeric field.

        Raises:
            ValueError: On a non-positive field or inconsistent sample counts.
        """
        for name in _INT_FIELDS + _FLOAT_FIELDS:
            value = getattr(self, name)
            if value is None and name == "num_superpixels":
                continue
            if name == "seed":
                if value < 0:
                    raise ValueError(f"seed must be non-negative, got {value}")
                continue
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.per_class < self.per_class_small:
            raise ValueError(
                f"per_class ({self.per_class}) must be >= "
                f"per_class_small ({self.per_class_small})"
            )
        if not 0 < self.val_fraction < 1:
            raise ValueError(
                f"val_fraction must lie in (0, 1), got {self.val_fraction}"
            )
        if self.preset is not None and self.preset not in constants.PRESETS:
            raise ValueError(
                f"Unknown preset {self.preset!r}; "
                f"choose from {sorted(constants.PRESETS)}"
            )

    def with_overrides(self, **overrides: Any) -> "RunConfig":
        """Copy with some fields replaced (None values are ignored)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)

    def resolve_num_superpixels(self, width: int, height: int) -> int:
        """Target superpixel count: configured, else W*H/14 capped at 2000."""
        if self.num_superpixels is not None:
            return self.num_superpixels
        auto = (width * height) // constants.PIXELS_PER_SUPERPIXEL
        return max(1, min(constants.MAX_SUPERPIXELS, auto))


_INT_FIELDS = [
    "pca_dim",
    "num_superpixels",
    "slic_iters",
    "o",
    "k",
    "c",
    "hidden_units",
    "conv_dim",
    "epochs",
    "seed",
    "per_class",
    "per_class_small",
]
_FLOAT_FIELDS = ["compactness", "learning_rate", "val_fraction", "balance_eps"]
_STR_FIELDS = ["cube", "labels", "preset"]


##
# Cubes:
##


def cube_header_path(path: str) -> str:
    """Header path for a cube given either the header path or its stem."""
    if path.endswith(constants.CUBE_HEADER_SUFFIX):
        return path
    return path + constants.CUBE_HEADER_SUFFIX


def cube_files(path: str) -> List[str]:
    """Header and payload paths of a stored cube.

    Raises:
        FileNotFoundError: If the header is missing.
    """
    header_path = cube_header_path(path)
    if not os.path.isfile(header_path):
        raise FileNotFoundError(f"Cube header not found: {header_path}")
    with open(header_path, "r", encoding="utf-8") as openfile:
        payload = json.load(openfile).get("payload", "")
    return [header_path, os.path.join(os.path.dirname(header_path), payload)]


def load_cube(path: str) -> HsiCube:
    """Read a cube from its JSON header and raw payload.

    Args:
        path (str): Path to `<name>.hgc.json` (or the `<name>` stem).

    Raises:
        FileNotFoundError: If the header or payload is missing.
        ValueError: If the header is ill-formed, the payload length does not
                    match the declared dimensions, or values are non-finite.

    Returns:
        HsiCube: The cube with the declared dimensions.
    """
    header_path = cube_header_path(path)
    if not os.path.isfile(header_path):
        raise FileNotFoundError(f"Cube header not found: {header_path}")

    with open(header_path, "r", encoding="utf-8") as openfile:
        try:
            header = json.load(openfile)
        except json.JSONDecodeError as e:
            raise ValueError(f"Ill-formed cube header {header_path}: {e}") from e

    if not isinstance(header, dict):
        raise ValueError(f"Ill-formed cube header {header_path}: not an object")
    missing = [key for key in constants.HEADER_KEYS if key not in header]
    if missing:
        raise ValueError(f"Ill-formed cube header {header_path}: missing {missing}")
    if header["dtype"] != constants.CUBE_DTYPE:
        raise ValueError(
            f"Unsupported dtype {header['dtype']!r} in {header_path}; "
            f"expected {constants.CUBE_DTYPE!r}"
        )
    width, height, bands = (header["width"], header["height"], header["bands"])
    for name, value in (("width", width), ("height", height), ("bands", bands)):
        if not isinstance(value, int) or value < 1:
            raise ValueError(f"Ill-formed cube header {header_path}: bad {name}")

    payload_path = os.path.join(os.path.dirname(header_path), header["payload"])
    if not os.path.isfile(payload_path):
        raise FileNotFoundError(f"Cube payload not found: {payload_path}")
    with open(payload_path, "rb") as openfile:
        raw = openfile.read()

    expected = width * height * bands * 4
    if len(raw) != expected:
        raise ValueError(
            f"payload length mismatch in {payload_path}: "
            f"expected {expected} bytes, found {len(raw)}"
        )

    values = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"Non-finite values in cube payload {payload_path}")

    cube = HsiCube(width, height, bands, values.reshape(bands, height, width))
    logging.info("Loaded %sx%sx%s cube from %s", width, height, bands, header_path)
    return cube


def save_cube(cube: HsiCube, path: str) -> str:
    """Write a cube as header + little-endian float32 payload.

    Args:
        cube (HsiCube): The cube.
        path (str): Header path (or stem).

    Returns:
        str: The header path written.
    """
    header_path = cube_header_path(path)
    stem = os.path.basename(header_path)[: -len(constants.CUBE_HEADER_SUFFIX)]
    payload_name = stem + constants.CUBE_PAYLOAD_SUFFIX
    header = {
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "dtype": constants.CUBE_DTYPE,
        "payload": payload_name,
    }
    payload = np.ascontiguousarray(cube.data, dtype="<f4").tobytes()
    utils.atomic_write(
        os.path.join(os.path.dirname(header_path), payload_name), payload
    )
    utils.atomic_write(header_path, json.dumps(header, indent=2) + "\n")
    return header_path


##
# Label maps:
##


def load_labels(path: str, cube: Optional[HsiCube] = None) -> LabelMap:
    """Read a ground-truth label map from a text grid or a PGM image.

    Args:
        path (str): Label file path.
        cube (Optional[HsiCube]): If given, dimensions must match it.

    Raises:
        FileNotFoundError: If the file is missing.
        ValueError: On negative ids, ragged rows, a dimension mismatch, or
                    non-contiguous class ids.

    Returns:
        LabelMap: The label map.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Label file not found: {path}")

    if path.lower().endswith(constants.LABELS_PGM_SUFFIX):
        labels = _read_pgm(path)
    else:
        labels = _read_label_text(path)

    if labels.size and labels.min() < 0:
        raise ValueError(f"Negative class ids in {path}")

    height, width = labels.shape
    if cube is not None and (cube.width, cube.height) != (width, height):
        raise ValueError(
            f"Label map {path} is {width}x{height} but the cube is "
            f"{cube.width}x{cube.height}"
        )

    ids = np.unique(labels[labels > 0])
    if ids.size and not np.array_equal(ids, np.arange(1, ids.size + 1)):
        remap = {int(old): new for new, old in enumerate(ids, start=1)}
        raise ValueError(
            f"non-contiguous class ids {ids.tolist()} in {path}; "
            f"remap suggestion: {remap}"
        )

    label_map = LabelMap(width=width, height=height, labels=labels)
    if ids.size == 0:
        logging.warning("Label file %s holds zero labeled pixels.", path)
    logging.info("Class pixel counts in %s: %s", path, label_map.class_counts())
    return label_map


def save_labels(label_map: LabelMap, path: str) -> None:
    """Write a label map as a text grid, or as a 16-bit PGM for `.pgm` paths."""
    if path.lower().endswith(constants.LABELS_PGM_SUFFIX):
        header = f"P5\n{label_map.width} {label_map.height}\n65535\n"
        body = np.ascontiguousarray(label_map.labels, dtype=">u2").tobytes()
        utils.atomic_write(path, header.encode("ascii") + body)
        return
    rows = [" ".join(str(int(v)) for v in row) for row in label_map.labels]
    utils.atomic_write(path, "\n".join(rows) + "\n")


def _read_label_text(path: str) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as openfile:
        for line in openfile:
            if line.strip():
                try:
                    rows.append([int(tok) for tok in line.split()])
                except ValueError as e:
                    raise ValueError(f"Non-integer label in {path}: {e}") from e
    if not rows:
        raise ValueError(f"Empty label file: {path}")
    if len({len(row) for row in rows}) != 1:
        raise ValueError(f"Ragged rows in label file {path}")
    return np.array(rows, dtype=np.int64)


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as openfile:
        raw = openfile.read()

    # Header tokens: magic, width, height, maxval; '#' starts a comment.
    tokens: List[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise ValueError(f"Truncated PGM header in {path}")
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])

    magic = tokens[0]
    try:
        width, height, maxval = (int(tok) for tok in tokens[1:])
    except ValueError as e:
        raise ValueError(f"Ill-formed PGM header in {path}") from e

    if magic == b"P2":
        values = [int(tok) for tok in raw[pos:].split()]
        if len(values) != width * height:
            raise ValueError(f"PGM pixel count mismatch in {path}")
        return np.array(values, dtype=np.int64).reshape(height, width)
    if magic != b"P5":
        raise ValueError(f"Unsupported PGM magic {magic!r} in {path}")

    body = raw[pos + 1 :]
    dtype = ">u2" if maxval > 255 else "u1"
    expected = width * height * np.dtype(dtype).itemsize
    if len(body) != expected:
        raise ValueError(f"PGM payload length mismatch in {path}")
    return np.frombuffer(body, dtype=dtype).astype(np.int64).reshape(height, width)


##
# Sample splits:
##


def split_samples(
    labels: LabelMap,
    per_class: int,
    per_class_small: int,
    val_fraction: float,
    seed: int,
) -> DatasetSplit:
    """Draw the per-class labeled samples and hold out a validation share.

    Classes with at least `per_class` pixels contribute `per_class` samples,
    smaller classes contribute `per_class_small`. Of each class's drawn
    pixels, ceil(val_fraction * n) go to validation. All other labeled
    pixels form the test set.

    Args:
        labels (LabelMap): Ground truth.
        per_class (int): Samples for regular classes.
        per_class_small (int): Samples for classes smaller than per_class.
        val_fraction (float): Share of drawn samples used for validation.
        seed (int): Generator seed.

    Raises:
        ValueError: On bad parameters or a class smaller than per_class_small.

    Returns:
        DatasetSplit: The split.
    """
    if not per_class >= per_class_small >= 1:
        raise ValueError(
            f"Need per_class >= per_class_small >= 1, "
            f"got {per_class} and {per_class_small}"
        )
    if not 0 < val_fraction < 1:
        raise ValueError(f"val_fraction must lie in (0, 1), got {val_fraction}")

    rng = np.random.default_rng(seed)
    flat = labels.flat()
    train: Dict[int, np.ndarray] = {}
    val: Dict[int, np.ndarray] = {}
    drawn_all = []

    for cls in range(1, labels.num_classes + 1):
        members = np.flatnonzero(flat == cls)
        if members.size < per_class_small:
            raise ValueError(
                f"Class {cls} has {members.size} labeled pixels, "
                f"fewer than per_class_small={per_class_small}"
            )
        n_draw = per_class if members.size >= per_class else per_class_small
        drawn = rng.permutation(members)[:n_draw]
        # Rounding guards against e.g. 0.1 * 30 = 3.0000000000000004.
        n_val = math.ceil(round(val_fraction * n_draw, 9))
        val[cls] = np.sort(drawn[:n_val])
        train[cls] = np.sort(drawn[n_val:])
        if train[cls].size == 0:
            logging.warning("Class %s has no training pixels after the split.", cls)
        drawn_all.append(drawn)

    drawn_mask = np.zeros(flat.size, dtype=bool)
    for drawn in drawn_all:
        drawn_mask[drawn] = True
    test = np.flatnonzero((flat > 0) & ~drawn_mask)

    logging.info(
        "Split with seed %s: %s train, %s validation, %s test pixels.",
        seed,
        sum(v.size for v in train.values()),
        sum(v.size for v in val.values()),
        test.size,
    )
    return DatasetSplit(train_pixels=train, val_pixels=val, test_pixels=test, seed=seed)


def save_split(split: DatasetSplit, path: str) -> None:
    """Write a split as JSON."""
    payload = {
        "seed": split.seed,
        "train": {str(c): v.tolist() for c, v in split.train_pixels.items()},
        "val": {str(c): v.tolist() for c, v in split.val_pixels.items()},
        "test": split.test_pixels.tolist(),
    }
    utils.atomic_write(path, json.dumps(payload) + "\n")


def load_split(path: str) -> DatasetSplit:
    """Read a split written by `save_split`."""
    with open(path, "r", encoding="utf-8") as openfile:
        payload = json.load(openfile)
    return DatasetSplit(
        train_pixels={
            int(c): np.array(v, dtype=np.int64) for c, v in payload["train"].items()
        },
        val_pixels={
            int(c): np.array(v, dtype=np.int64) for c, v in payload["val"].items()
        },
        test_pixels=np.array(payload["test"], dtype=np.int64),
        seed=int(payload["seed"]),
    )


def _concat_sorted(per_class: Dict[int, np.ndarray]) -> np.ndarray:
    if not per_class:
        return np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(list(per_class.values()))).astype(np.int64)


##
# Run configuration:
##


def load_run_config(path: str) -> RunConfig:
    """Read a RunConfig from a JSON file or a flat key=value file.

    Relative input paths are resolved against the config file's directory.
    A `preset` key fills the dataset's graph defaults; explicit keys win.

    Args:
        path (str): Config file path.

    Raises:
        FileNotFoundError: If the file is missing.
        ValueError: On unknown keys or values of the wrong type.

    Returns:
        RunConfig: The validated configuration.
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as openfile:
        text = openfile.read()

    if path.lower().endswith(".json"):
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise ValueError(f"Config {path} must hold a JSON object")
    else:
        raw = _parse_key_values(text, path)

    values = parse_config_values(raw)
    base_dir = os.path.dirname(os.path.abspath(path))
    for key in ("cube", "labels"):
        if values.get(key) and not os.path.isabs(values[key]):
            values[key] = os.path.normpath(os.path.join(base_dir, values[key]))

    config = config_from_values(values)
    logging.info("Loaded run configuration from %s", path)
    return config


def config_from_values(values: Dict[str, Any]) -> RunConfig:
    """Build a RunConfig from coerced values, applying any preset first."""
    merged: Dict[str, Any] = {}
    preset = values.get("preset")
    if preset is not None:
        if preset not in constants.PRESETS:
            raise ValueError(f"Unknown preset {preset!r}")
        merged.update(constants.PRESETS[preset])
    merged.update(values)
    return RunConfig(**merged)


def parse_config_values(raw: Dict[str, Any]) -> Dict[str, Any]:
    """Coerce raw config values to each field's type.

    Raises:
        ValueError: On unknown keys or uncoercible values.
    """
    known = {f.name for f in dataclasses.fields(RunConfig)}
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"Unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def _coerce(key: str, value: Any) -> Any:
    if key == "class_names":
        if isinstance(value, str):
            return [name.strip() for name in value.split(",") if name.strip()]
        return [str(name) for name in value]
    if value is None or (isinstance(value, str) and value.lower() in ("", "none")):
        if key in ("num_superpixels", "preset"):
            return None
        raise ValueError(f"Config key {key!r} needs a value")
    try:
        if key in _INT_FIELDS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(f"{value} is not an integer")
            return int(value)
        if key in _FLOAT_FIELDS:
            return float(value)
    except (TypeError, ValueError) as e:
        raise ValueError(f"Bad value {value!r} for config key {key!r}") from e
    return str(value)


def _parse_key_values(text: str, path: str) -> Dict[str, str]:
    raw = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{number}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        raw[key.strip()] = value.strip()
    return raw
