"""Minimal dense neural-network engine.

Explicit forward/backward passes over float64 numpy arrays, optional binary
connection masks, plain SGD, and per-sample weighted losses.  Every model in
the package (density estimators, discriminators, classifiers) is built from
these pieces.

Conventions:
  * a batch is a 2-D float64 array, one sample per row;
  * layer weights are ``(out, in)``, biases ``(out,)``;
  * a mask, when present, has the weight shape with entries in {0, 1} and the
    effective weight is ``weights * mask`` in every forward and gradient step.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

log = logging.getLogger(__name__)

ACTIVATIONS = ("identity", "relu", "sigmoid", "softmax")
LOSS_KINDS = ("weighted-cross-entropy", "bernoulli-nll", "binary-cross-entropy")

# Floor for probabilities inside logs; prevents -inf losses on confident
# mispredictions.
PROB_FLOOR = 1e-12


def as_tensor2d(x: np.ndarray) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array, validating finiteness."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NumericError("array contains NaN/Inf entries")
    return arr


@dataclass
class DenseLayer:
    """Fully connected layer with an optional binary connection mask."""

    weights: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"weights {self.weights.shape} incompatible with bias {self.bias.shape}"
            )
        if self.mask is not None:
            if self.mask.shape != self.weights.shape:
                raise ShapeError(
                    f"mask shape {self.mask.shape} != weights shape {self.weights.shape}"
                )
            if not np.all((self.mask == 0.0) | (self.mask == 1.0)):
                raise ConfigError("mask entries must be 0 or 1")

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def effective_weights(self) -> np.ndarray:
        return self.weights if self.mask is None else self.weights * self.mask


@dataclass
class Network:
    """Ordered dense layers plus the loss the network is trained with."""

    layers: list[DenseLayer]
    loss_kind: str = "weighted-cross-entropy"

    def __post_init__(self) -> None:
        if not self.layers:
            raise ConfigError("network needs at least one layer")
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss kind {self.loss_kind!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ShapeError(
                    f"layer output dim {a.out_dim} != next layer input dim {b.in_dim}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


def glorot_layer(
    in_dim: int,
    out_dim: int,
    activation: str,
    rng: np.random.Generator,
    mask: np.ndarray | None = None,
) -> DenseLayer:
    """Layer with uniform init in +/- sqrt(6 / (fan_in + fan_out)), zero bias."""
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    weights = rng.uniform(-bound, bound, size=(out_dim, in_dim))
    return DenseLayer(weights=weights, bias=np.zeros(out_dim), activation=activation, mask=mask)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return z
    if activation == "relu":
        return np.maximum(z, 0.0)
    if activation == "sigmoid":
        # Split by sign to stay overflow-free in exp.
        out = np.empty_like(z)
        pos = z >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
        ez = np.exp(z[~pos])
        out[~pos] = ez / (1.0 + ez)
        return out
    if activation == "softmax":
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)
    raise ConfigError(f"unknown activation {activation!r}")


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    """d(activation)/dz, elementwise; softmax is handled jointly with the loss."""
    if activation == "identity":
        return np.ones_like(z)
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    if activation == "sigmoid":
        return a * (1.0 - a)
    raise ConfigError("softmax is only supported as the final activation")


def forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Run the batch through all layers and return the final activations."""
    a = as_tensor2d(batch)
    if a.shape[1] != net.in_dim:
        raise ShapeError(f"batch has {a.shape[1]} columns, network expects {net.in_dim}")
    for layer in net.layers:
        z = a @ layer.effective_weights().T + layer.bias
        a = _activate(z, layer.activation)
    if not np.all(np.isfinite(a)):
        raise NumericError("forward pass produced non-finite activations")
    return a


def _forward_trace(net: Network, batch: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Forward pass keeping pre-activations and activations for backprop."""
    activations = [as_tensor2d(batch)]
    pre = []
    a = activations[0]
    for layer in net.layers:
        z = a @ layer.effective_weights().T + layer.bias
        a = _activate(z, layer.activation)
        pre.append(z)
        activations.append(a)
    return pre, activations


def _check_weights(sample_weights: np.ndarray, n_rows: int) -> np.ndarray:
    w = np.asarray(sample_weights, dtype=np.float64)
    if w.shape != (n_rows,):
        raise ShapeError(f"sample_weights shape {w.shape} != ({n_rows},)")
    if np.any(w < 0.0):
        raise ConfigError("sample weights must be >= 0")
    return w


def weighted_ce_loss(
    probs: np.ndarray,
    labels: np.ndarray,
    sample_weights: np.ndarray,
) -> float:
    """(1/N) sum_j alpha_j * (-log probs[j, label_j]).

    ``probs`` rows must sum to 1 within 1e-6 (softmax outputs).  Probabilities
    at the true label are floored at 1e-12; clamping is counted in the log.
    """
    probs = as_tensor2d(probs)
    labels = np.asarray(labels)
    n = probs.shape[0]
    w = _check_weights(sample_weights, n)
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        bad = int(np.argmax(np.abs(row_sums - 1.0)))
        raise ShapeError(f"probability rows must sum to 1; row {bad} sums to {row_sums[bad]}")
    picked = probs[np.arange(n), labels]
    clamped = picked < PROB_FLOOR
    if np.any(clamped):
        idx = np.flatnonzero(clamped)
        log.warning(
            "clamped %d probabilities at floor %.0e (first sample index %d)",
            idx.size,
            PROB_FLOOR,
            idx[0],
        )
    losses = -np.log(np.maximum(picked, PROB_FLOOR))
    return float(np.sum(w * losses) / n)


def _bernoulli_per_sample(probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = np.clip(probs, PROB_FLOOR, 1.0 - PROB_FLOOR)
    return -np.sum(targets * np.log(p) + (1.0 - targets) * np.log(1.0 - p), axis=1)


def bernoulli_nll_loss(
    probs: np.ndarray, targets: np.ndarray, sample_weights: np.ndarray
) -> float:
    """Weighted mean over the batch of the per-sample Bernoulli NLL (summed over dims)."""
    probs = as_tensor2d(probs)
    targets = as_tensor2d(targets)
    if probs.shape != targets.shape:
        raise ShapeError(f"probs shape {probs.shape} != targets shape {targets.shape}")
    w = _check_weights(sample_weights, probs.shape[0])
    return float(np.sum(w * _bernoulli_per_sample(probs, targets)) / probs.shape[0])


def binary_cross_entropy_loss(
    probs: np.ndarray, targets: np.ndarray, sample_weights: np.ndarray
) -> float:
    """Like :func:`bernoulli_nll_loss` but averaged over output dims as well."""
    probs = as_tensor2d(probs)
    return bernoulli_nll_loss(probs, targets, sample_weights) / probs.shape[1]


def network_loss(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    sample_weights: np.ndarray,
) -> float:
    """Forward the batch and evaluate the network's own loss kind.

    ``targets`` is an integer label vector for weighted-cross-entropy and a
    matrix of per-dim targets for the Bernoulli losses.
    """
    out = forward(net, batch)
    if net.loss_kind == "weighted-cross-entropy":
        return weighted_ce_loss(out, targets, sample_weights)
    if net.loss_kind == "bernoulli-nll":
        return bernoulli_nll_loss(out, targets, sample_weights)
    return binary_cross_entropy_loss(out, targets, sample_weights)


def _per_sample_losses(net: Network, out: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if net.loss_kind == "weighted-cross-entropy":
        picked = out[np.arange(out.shape[0]), np.asarray(targets)]
        return -np.log(np.maximum(picked, PROB_FLOOR))
    per = _bernoulli_per_sample(out, as_tensor2d(targets))
    if net.loss_kind == "binary-cross-entropy":
        per = per / out.shape[1]
    return per


def backward(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    sample_weights: np.ndarray,
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact analytic gradients of the weighted loss.

    Returns one ``(dW, db)`` pair per layer, with masked weight entries
    carrying gradient exactly zero.  The final activation must match the
    loss kind (softmax for cross-entropy, sigmoid for the Bernoulli losses).
    """
    batch = as_tensor2d(batch)
    n = batch.shape[0]
    w = _check_weights(sample_weights, n)
    pre, activations = _forward_trace(net, batch)
    out = activations[-1]

    per_sample = _per_sample_losses(net, out, targets)
    finite = np.isfinite(per_sample)
    if not np.all(finite):
        bad = int(np.flatnonzero(~finite)[0])
        raise NumericError(f"non-finite loss at sample index {bad}")

    final_act = net.layers[-1].activation
    if net.loss_kind == "weighted-cross-entropy":
        if final_act != "softmax":
            raise ConfigError("weighted-cross-entropy requires a softmax output layer")
        labels = np.asarray(targets)
        delta = out.copy()
        delta[np.arange(n), labels] -= 1.0
    else:
        if final_act != "sigmoid":
            raise ConfigError(f"{net.loss_kind} requires a sigmoid output layer")
        delta = out - as_tensor2d(targets)
        if net.loss_kind == "binary-cross-entropy":
            delta = delta / out.shape[1]
    delta = delta * (w / n)[:, None]

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        dw = delta.T @ activations[i]
        if layer.mask is not None:
            dw *= layer.mask
        db = delta.sum(axis=0)
        if not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
            raise NumericError(f"non-finite gradient in layer {i}")
        grads[i] = (dw, db)
        if i > 0:
            upstream = delta @ layer.effective_weights()
            delta = upstream * _activation_grad(pre[i - 1], activations[i], net.layers[i - 1].activation)
    return grads


def sgd_step(
    net: Network, grads: list[tuple[np.ndarray, np.ndarray]], lr: float
) -> Network:
    """In-place ``p <- p - lr * grad`` on every parameter; masks untouched."""
    if lr < 0.0:
        raise ConfigError("learning rate must be >= 0")
    if len(grads) != len(net.layers):
        raise ShapeError(f"got {len(grads)} gradient pairs for {len(net.layers)} layers")
    for layer, (dw, db) in zip(net.layers, grads):
        if dw.shape != layer.weights.shape or db.shape != layer.bias.shape:
            raise ShapeError("gradient shapes do not match layer parameters")
        layer.weights -= lr * dw
        layer.bias -= lr * db
    return net


def sgd_epoch(
    net: Network,
    batch: np.ndarray,
    targets: np.ndarray,
    sample_weights: np.ndarray,
    lr: float,
    batch_size: int,
    rng: np.random.Generator,
) -> float:
    """One epoch of minibatch SGD with a deterministic shuffle.

    Returns the mean of the minibatch losses (weighted by batch size), i.e.
    the epoch-average objective as seen by the optimizer.
    """
    batch = as_tensor2d(batch)
    n = batch.shape[0]
    if batch_size < 1:
        raise ConfigError("batch_size must be >= 1")
    w = _check_weights(sample_weights, n)
    targets = np.asarray(targets)
    order = rng.permutation(n)
    total = 0.0
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        xb, tb, wb = batch[idx], targets[idx], w[idx]
        total += network_loss(net, xb, tb, wb) * idx.size
        grads = backward(net, xb, tb, wb)
        sgd_step(net, grads, lr)
    return total / n


# --- parameter snapshots -------------------------------------------------

def param_count(net: Network) -> int:
    """Number of parameters (weights + biases); the wire size S of a snapshot."""
    return sum(l.weights.size + l.bias.size for l in net.layers)


def get_params(net: Network) -> np.ndarray:
    """Flatten all parameters into a single float64 vector (layer order)."""
    parts = []
    for layer in net.layers:
        parts.append(layer.weights.ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def set_params(net: Network, vec: np.ndarray) -> Network:
    """Install a flat parameter vector produced by :func:`get_params`."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (param_count(net),):
        raise ShapeError(f"parameter vector length {vec.size} != {param_count(net)}")
    pos = 0
    for layer in net.layers:
        n_w = layer.weights.size
        layer.weights = vec[pos : pos + n_w].reshape(layer.weights.shape).copy()
        pos += n_w
        n_b = layer.bias.size
        layer.bias = vec[pos : pos + n_b].copy()
        pos += n_b
    return net


def serialize_params(net: Network) -> bytes:
    """Snapshot bytes: a shape header then the flat little-endian float64 payload.

    Header: uint32 layer count, then (out, in) uint32 pairs per layer.  The
    payload byte size divided by 8 is the wire size S used for communication
    accounting.
    """
    header = struct.pack("<I", len(net.layers))
    for layer in net.layers:
        header += struct.pack("<II", layer.out_dim, layer.in_dim)
    payload = get_params(net).astype("<f8").tobytes()
    return header + payload


def deserialize_params(blob: bytes) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Parse a snapshot into per-layer (out, in) dims and the flat vector."""
    if len(blob) < 4:
        raise ShapeError("snapshot too short for a header")
    (n_layers,) = struct.unpack_from("<I", blob, 0)
    offset = 4
    dims: list[tuple[int, int]] = []
    for _ in range(n_layers):
        if offset + 8 > len(blob):
            raise ShapeError("snapshot header truncated")
        out_dim, in_dim = struct.unpack_from("<II", blob, offset)
        dims.append((out_dim, in_dim))
        offset += 8
    expected = sum(o * i + o for o, i in dims)
    vec = np.frombuffer(blob, dtype="<f8", offset=offset)
    if vec.size != expected:
        raise ShapeError(f"snapshot payload has {vec.size} values, header implies {expected}")
    return dims, vec.astype(np.float64)
