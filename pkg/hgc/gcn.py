"""
Graph convolutional classifier

A 1x1 feature transform followed by two graph convolutions:

    P = softmax(A' relu(A' relu(X Theta) W0) W1)

with the summed cross-entropy loss over labeled nodes, its analytic gradients
and Adam updates. Everything runs in 64-bit floating point.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from hgc import constants, utils

PARAM_NAMES = ("theta", "w0", "w1")


@dataclass
class GcnModel:
    """Theta (F x d_c), W0 (d_c x d_h) and W1 (d_h x C)."""

    theta: np.ndarray
    w0: np.ndarray
    w1: np.ndarray

    def __post_init__(self):
        if (
            self.theta.shape[1] != self.w0.shape[0]
            or self.w0.shape[1] != self.w1.shape[0]
        ):
            raise ValueError(
                "Inconsistent parameter shapes: "
                f"{self.theta.shape}, {self.w0.shape}, {self.w1.shape}"
            )

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        """(F, d_c, d_h, C)."""
        return (
            self.theta.shape[0],
            self.theta.shape[1],
            self.w0.shape[1],
            self.w1.shape[1],
        )

    @property
    def num_classes(self) -> int:
        return self.w1.shape[1]

    def params(self) -> Dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "GcnModel":
        return GcnModel(**{name: p.copy() for name, p in self.params().items()})


@dataclass
class AdamState:
    """Moment accumulators keyed like GcnModel.params()."""

    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0
    beta1: float = constants.ADAM_BETA1
    beta2: float = constants.ADAM_BETA2
    epsilon: float = constants.ADAM_EPSILON

    @classmethod
    def for_model(cls, model: GcnModel, **hyper: float) -> "AdamState":
        params = model.params()
        return cls(
            m={name: np.zeros_like(value) for name, value in params.items()},
            v={name: np.zeros_like(value) for name, value in params.items()},
            **hyper,
        )

    def copy(self) -> "AdamState":
        return AdamState(
            m={name: value.copy() for name, value in self.m.items()},
            v={name: value.copy() for name, value in self.v.items()},
            t=self.t,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
        )


@dataclass(frozen=True)
class ForwardCache:
    """Intermediates of one forward pass.

    u = X Theta, h0 = relu(u), ah0 = A' h0, z1 = ah0 W0, h1 = relu(z1),
    ah1 = A' h1, z2 = ah1 W1, probs = softmax(z2).
    """

    u: np.ndarray
    h0: np.ndarray
    ah0: np.ndarray
    z1: np.ndarray
    h1: np.ndarray
    ah1: np.ndarray
    z2: np.ndarray
    probs: np.ndarray = field(repr=False)


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_model(dims: Tuple[int, int, int, int], seed: int) -> GcnModel:
    """Glorot-uniform model for dims (F, d_c, d_h, C).

    Raises:
        ValueError: If any dimension is not positive.
    """
    if len(dims) != 4 or min(dims) < 1:
        raise ValueError(f"Model dimensions must be four positive ints, got {dims}")
    features, conv_dim, hidden, classes = dims
    rng = np.random.default_rng(seed)
    return GcnModel(
        theta=glorot_uniform(rng, features, conv_dim),
        w0=glorot_uniform(rng, conv_dim, hidden),
        w1=glorot_uniform(rng, hidden, classes),
    )


def _relu(values: np.ndarray) -> np.ndarray:
    return np.maximum(values, 0.0)


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row maximum."""
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _check_finite(layer: str, values: np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise FloatingPointError(f"Non-finite values in layer '{layer}'")


def forward(model: GcnModel, A_norm, X: np.ndarray) -> ForwardCache:
    """Run the network on one (sub-)graph.

    Args:
        model (GcnModel): Parameters.
        A_norm: N x N normalized adjacency (sparse or dense).
        X (np.ndarray): N x F node attributes.

    Raises:
        ValueError: On shape disagreement.
        FloatingPointError: If an intermediate is not finite.

    Returns:
        ForwardCache: Intermediates and class probabilities.
    """
    n, features = X.shape
    if A_norm.shape != (n, n):
        raise ValueError(f"Adjacency shape {A_norm.shape} does not match {n} nodes")
    if features != model.theta.shape[0]:
        raise ValueError(
            f"Attribute width {features} does not match model input "
            f"{model.theta.shape[0]}"
        )
    u = X @ model.theta
    _check_finite("1x1 convolution", u)
    h0 = _relu(u)
    ah0 = np.asarray(A_norm @ h0)
    z1 = ah0 @ model.w0
    _check_finite("graph convolution 1", z1)
    h1 = _relu(z1)
    ah1 = np.asarray(A_norm @ h1)
    z2 = ah1 @ model.w1
    _check_finite("graph convolution 2", z2)
    probs = softmax(z2)
    _check_finite("softmax", probs)
    return ForwardCache(u=u, h0=h0, ah0=ah0, z1=z1, h1=h1, ah1=ah1, z2=z2, probs=probs)


def predict(model: GcnModel, A_norm, X: np.ndarray) -> np.ndarray:
    """Class id (1..C) per node; probability ties go to the smallest id."""
    return np.argmax(forward(model, A_norm, X).probs, axis=1) + 1


def _checked_mask(labels: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    mask = labels > 0 if mask is None else np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise ValueError("Loss mask selects no node")
    if np.any(labels[mask] < 1):
        raise ValueError("Masked nodes must carry class ids >= 1")
    return mask


def loss(
    probs: np.ndarray, labels: np.ndarray, mask: Optional[np.ndarray] = None
) -> float:
    """Cross-entropy summed over the masked nodes: -sum ln P[g, y(g)].

    Args:
        probs (np.ndarray): N x C probabilities.
        labels (np.ndarray): Class id (1..C) per node, 0 = none.
        mask (Optional[np.ndarray]): Nodes to score. Defaults to labels > 0.

    Raises:
        ValueError: If the mask is empty or selects an unlabeled node.
    """
    mask = _checked_mask(labels, mask)
    rows = np.flatnonzero(mask)
    picked = probs[rows, labels[rows] - 1]
    return float(-np.sum(np.log(np.maximum(picked, np.finfo(np.float64).tiny))))


def backward(
    cache: ForwardCache,
    model: GcnModel,
    A_norm,
    X: np.ndarray,
    labels: np.ndarray,
    mask: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Gradients of `loss` with respect to Theta, W0 and W1.

    A' is symmetric, so it back-propagates as itself.
    """
    mask = _checked_mask(labels, mask)
    rows = np.flatnonzero(mask)
    d_z2 = np.zeros_like(cache.probs)
    d_z2[rows] = cache.probs[rows]
    d_z2[rows, labels[rows] - 1] -= 1.0

    d_w1 = cache.ah1.T @ d_z2
    d_h1 = np.asarray(A_norm @ (d_z2 @ model.w1.T))
    d_z1 = d_h1 * (cache.z1 > 0)
    d_w0 = cache.ah0.T @ d_z1
    d_h0 = np.asarray(A_norm @ (d_z1 @ model.w0.T))
    d_u = d_h0 * (cache.u > 0)
    d_theta = X.T @ d_u
    return {"theta": d_theta, "w0": d_w0, "w1": d_w1}


def adam_step(
    model: GcnModel,
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> Tuple[GcnModel, AdamState]:
    """One bias-corrected Adam update, applied in place.

    Raises:
        ValueError: If a gradient's shape differs from its parameter's.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    step_size = lr / bc1

    for name, param in model.params().items():
        g = grads[name]
        if g.shape != param.shape:
            raise ValueError(
                f"Gradient shape {g.shape} != parameter {name} {param.shape}"
            )
        state.m[name] *= state.beta1
        state.m[name] += (1.0 - state.beta1) * g
        state.v[name] *= state.beta2
        state.v[name] += (1.0 - state.beta2) * (g * g)
        denom = np.sqrt(state.v[name] / bc2) + state.epsilon
        param -= step_size * state.m[name] / denom
    return model, state


##
# Checkpoints:
##


def save_checkpoint(
    model: GcnModel, path: str, state: Optional[AdamState] = None
) -> None:
    """Write the parameters, and optionally the Adam state, to an `.npz`."""
    arrays = {"version": np.array(constants.CHECKPOINT_VERSION)}
    arrays.update(model.params())
    if state is not None:
        arrays["adam_t"] = np.array(state.t)
        arrays["adam_hyper"] = np.array([state.beta1, state.beta2, state.epsilon])
        for name in PARAM_NAMES:
            arrays[f"adam_m_{name}"] = state.m[name]
            arrays[f"adam_v_{name}"] = state.v[name]
    utils.save_arrays(path, **arrays)


def load_checkpoint(path: str) -> Tuple[GcnModel, Optional[AdamState]]:
    """Read a checkpoint written by `save_checkpoint`.

    Raises:
        ValueError: On an unknown checkpoint version.
    """
    arrays = utils.load_arrays(path)
    version = int(arrays.get("version", -1))
    if version != constants.CHECKPOINT_VERSION:
        raise ValueError(f"Unsupported checkpoint version {version} in {path}")
    model = GcnModel(**{name: arrays[name] for name in PARAM_NAMES})
    state = None
    if "adam_t" in arrays:
        beta1, beta2, epsilon = (float(v) for v in arrays["adam_hyper"])
        state = AdamState(
            m={name: arrays[f"adam_m_{name}"] for name in PARAM_NAMES},
            v={name: arrays[f"adam_v_{name}"] for name in PARAM_NAMES},
            t=int(arrays["adam_t"]),
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )
    logging.debug("Loaded checkpoint %s with dims %s.", path, model.dims)
    return model, state
