"""Feed-forward regressor trained by SGD on mean squared error.

Hidden layers use leaky ReLU; regularization is inverted dropout plus L2
weight decay on the weights (biases excluded).  Parameters expose a flat
vector view so updates can be clipped, masked, and aggregated as plain
arrays, and a canonical byte serialization whose hash anchors each round's
snapshot in the ledger.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

DEFAULT_HIDDEN = (32, 16)


class ModelError(Exception):
    pass


class BadArchitecture(ModelError):
    pass


class DimensionMismatch(ModelError):
    pass


class LengthMismatch(ModelError):
    pass


class EmptyInput(ModelError):
    pass


@dataclass(frozen=True)
class HyperParams:
    learning_rate: float = 0.01
    weight_decay: float = 1e-4
    dropout_p: float = 0.2
    leaky_slope: float = 0.01
    local_epochs: int = 1
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if not 0 <= self.dropout_p < 1:
            raise ValueError("dropout_p must be in [0, 1)")
        if not 0 < self.leaky_slope < 1:
            raise ValueError("leaky_slope must be in (0, 1)")
        if self.local_epochs < 1 or self.batch_size < 1:
            raise ValueError("local_epochs and batch_size must be >= 1")

    def describe(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "weight_decay": self.weight_decay,
            "dropout_p": self.dropout_p,
            "leaky_slope": self.leaky_slope,
            "local_epochs": self.local_epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
        }


@dataclass
class MLPParams:
    """Layer weights/biases plus the architecture that shapes them."""

    architecture: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MLPParams":
        return MLPParams(
            architecture=list(self.architecture),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    @property
    def n_params(self) -> int:
        return param_count(self.architecture)


@dataclass(frozen=True)
class Gradient:
    """Flat update vector congruent with MLPParams flattening."""

    values: np.ndarray
    n_k: int


def param_count(architecture: list[int]) -> int:
    return sum(
        architecture[i] * architecture[i + 1] + architecture[i + 1]
        for i in range(len(architecture) - 1)
    )


def init_params(architecture: list[int], seed: int) -> MLPParams:
    """Glorot-uniform weights, zero biases; deterministic in the seed."""
    if len(architecture) < 2 or any(w < 1 for w in architecture):
        raise BadArchitecture(f"bad layer widths {architecture}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(architecture[:-1], architecture[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(architecture=list(architecture), weights=weights, biases=biases)


def leaky_relu(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0, z, slope * z)


def leaky_relu_grad(z: np.ndarray, slope: float) -> np.ndarray:
    return np.where(z >= 0, 1.0, slope)


def sample_dropout_masks(
    architecture: list[int], p: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """Inverted-dropout masks for the hidden layers: 0 or 1/(1-p)."""
    if p == 0.0:
        return [np.ones(w) for w in architecture[1:-1]]
    keep = 1.0 - p
    return [
        (rng.random(w) >= p).astype(np.float64) / keep
        for w in architecture[1:-1]
    ]


def _forward_pass(
    params: MLPParams,
    x: np.ndarray,
    slope: float,
    masks: list[np.ndarray] | None,
):
    """Batched forward keeping pre-activations for backprop.

    x is (n, d); hidden activations get leaky ReLU and, in training mode,
    the supplied dropout masks.  The output layer is linear.
    """
    a = x
    pre_acts, acts = [], [a]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        pre_acts.append(z)
        if i < n_layers - 1:
            a = leaky_relu(z, slope)
            if masks is not None:
                a = a * masks[i]
        else:
            a = z
        acts.append(a)
    return pre_acts, acts


def forward(
    params: MLPParams,
    x: np.ndarray,
    slope: float = 0.01,
    dropout_masks: list[np.ndarray] | None = None,
) -> float | np.ndarray:
    """Predict for one feature vector (returns float) or a batch (n,)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.shape[1] != params.architecture[0]:
        raise DimensionMismatch(
            f"input dim {batch.shape[1]} != model input {params.architecture[0]}"
        )
    _, acts = _forward_pass(params, batch, slope, dropout_masks)
    out = acts[-1][:, 0]
    return float(out[0]) if single else out


def mse_loss(preds: np.ndarray, targets: np.ndarray) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DimensionMismatch(f"{preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise EmptyInput("mse of empty vectors")
    return float(np.mean((preds - targets) ** 2))


def backward(
    params: MLPParams,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    hyper: HyperParams,
    rng: np.random.Generator | None = None,
    dropout_masks: list[np.ndarray] | None = None,
) -> Gradient:
    """Exact gradient of MSE + (weight_decay/2)||W||^2 on one batch.

    Dropout masks are sampled from *rng* unless given explicitly; with the
    same masks held fixed the result matches finite differences of the
    masked loss.  Biases carry no decay term.
    """
    batch_x = np.asarray(batch_x, dtype=np.float64)
    batch_y = np.asarray(batch_y, dtype=np.float64)
    if batch_x.ndim != 2 or batch_x.shape[0] == 0:
        raise EmptyInput("backward needs a non-empty 2-d batch")
    if batch_x.shape[1] != params.architecture[0]:
        raise DimensionMismatch(
            f"input dim {batch_x.shape[1]} != model input {params.architecture[0]}"
        )
    if batch_y.shape[0] != batch_x.shape[0]:
        raise DimensionMismatch("batch_x and batch_y disagree on n")

    if dropout_masks is None:
        if hyper.dropout_p > 0 and rng is None:
            raise ValueError("dropout requires an rng or explicit masks")
        if hyper.dropout_p > 0:
            dropout_masks = sample_dropout_masks(params.architecture, hyper.dropout_p, rng)

    n = batch_x.shape[0]
    pre_acts, acts = _forward_pass(params, batch_x, hyper.leaky_slope, dropout_masks)
    preds = acts[-1][:, 0]

    grad_w = [np.zeros_like(w) for w in params.weights]
    grad_b = [np.zeros_like(b) for b in params.biases]

    # d(mean((p-y)^2))/dp = 2 (p - y) / n
    delta = (2.0 / n) * (preds - batch_y)[:, None]
    for layer in range(len(params.weights) - 1, -1, -1):
        grad_w[layer] = delta.T @ acts[layer] + hyper.weight_decay * params.weights[layer]
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ params.weights[layer]
            if dropout_masks is not None:
                delta = delta * dropout_masks[layer - 1]
            delta = delta * leaky_relu_grad(pre_acts[layer - 1], hyper.leaky_slope)

    flat = flatten_arrays(params.architecture, grad_w, grad_b)
    return Gradient(values=flat, n_k=n)


def sgd_step(params: MLPParams, grad: np.ndarray, learning_rate: float) -> MLPParams:
    """params - lr * grad, as a new value."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape[0] != params.n_params:
        raise DimensionMismatch(
            f"gradient length {grad.shape[0]} != parameter count {params.n_params}"
        )
    return unflatten(flatten(params) - learning_rate * grad, params.architecture)


def flatten_arrays(
    architecture: list[int], weights: list[np.ndarray], biases: list[np.ndarray]
) -> np.ndarray:
    parts = []
    for w, b in zip(weights, biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def flatten(params: MLPParams) -> np.ndarray:
    """Layer-major flat view: weights row-major, then biases, per layer."""
    return flatten_arrays(params.architecture, params.weights, params.biases)


def unflatten(flat: np.ndarray, architecture: list[int]) -> MLPParams:
    flat = np.asarray(flat, dtype=np.float64)
    expected = param_count(architecture)
    if flat.shape[0] != expected:
        raise LengthMismatch(f"vector length {flat.shape[0]} != {expected}")
    weights, biases = [], []
    offset = 0
    for fan_in, fan_out in zip(architecture[:-1], architecture[1:]):
        w = flat[offset : offset + fan_in * fan_out].reshape(fan_out, fan_in).copy()
        offset += fan_in * fan_out
        b = flat[offset : offset + fan_out].copy()
        offset += fan_out
        weights.append(w)
        biases.append(b)
    return MLPParams(architecture=list(architecture), weights=weights, biases=biases)


def serialize_params(params: MLPParams) -> bytes:
    """Canonical bytes: u32 layer count, u32 widths, f64 flat params (LE).

    This exact byte string is what gets content-addressed and anchored.
    """
    widths = params.architecture
    header = struct.pack("<I", len(widths)) + struct.pack(f"<{len(widths)}I", *widths)
    body = flatten(params).astype("<f8").tobytes()
    return header + body


def deserialize_params(blob: bytes) -> MLPParams:
    if len(blob) < 4:
        raise LengthMismatch("blob too short for a header")
    (n_widths,) = struct.unpack_from("<I", blob, 0)
    header_len = 4 + 4 * n_widths
    if len(blob) < header_len:
        raise LengthMismatch("blob too short for declared widths")
    widths = list(struct.unpack_from(f"<{n_widths}I", blob, 4))
    flat = np.frombuffer(blob, dtype="<f8", offset=header_len)
    if flat.shape[0] != param_count(widths):
        raise LengthMismatch(
            f"blob carries {flat.shape[0]} params, architecture wants {param_count(widths)}"
        )
    return unflatten(flat.astype(np.float64), widths)


def train(
    params: MLPParams,
    x: np.ndarray,
    y: np.ndarray,
    hyper: HyperParams,
    rng: np.random.Generator,
    epochs: int | None = None,
) -> MLPParams:
    """Mini-batch SGD for *epochs* passes (default: hyper.local_epochs).

    Rows are reshuffled every epoch unless a single full batch covers the
    data, in which case training is order-free and rng is untouched by
    shuffling (dropout still draws from it).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyInput("cannot train on an empty dataset")
    n = x.shape[0]
    epochs = hyper.local_epochs if epochs is None else epochs
    current = params
    full_batch = hyper.batch_size >= n
    for _ in range(epochs):
        order = np.arange(n) if full_batch else rng.permutation(n)
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            grad = backward(current, x[idx], y[idx], hyper, rng=rng)
            current = sgd_step(current, grad.values, hyper.learning_rate)
    return current
