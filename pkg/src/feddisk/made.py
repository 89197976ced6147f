"""Masked autoregressive density estimator.

A dense autoencoder whose connection masks enforce that output dim d only
sees input dims strictly earlier in the ordering, so the per-dim sigmoid
outputs are valid autoregressive conditionals and their product is a proper
joint probability.  Inputs live in [0, 1] and are modeled with Bernoulli
outputs trained by binary cross-entropy against the (possibly continuous)
observed values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, ShapeError


@dataclass
class MaskSet:
    """Input ordering, per-hidden-layer connectivity labels, and the masks.

    ``ordering[d]`` is the 1-based rank of input dim d (natural raster order
    here, so ordering == [1..D]).  ``hidden_labels[l][k]`` is the highest rank
    hidden unit k of layer l may depend on, drawn from [1, D-1].  Hidden masks
    allow a connection iff the downstream label >= the upstream label/rank;
    the output mask is strict (rank > label), which is what makes dim d
    independent of itself and of later dims.
    """

    ordering: np.ndarray
    hidden_labels: list[np.ndarray]
    masks: list[np.ndarray]


@dataclass
class MadeModel:
    net: nn.Network
    mask_set: MaskSet

    @property
    def input_dim(self) -> int:
        return self.net.in_dim


@dataclass
class TrainLog:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = 0  # 1-based epoch whose parameters were kept
    stopped_early: bool = False


def masks_from_labels(ordering: np.ndarray, hidden_labels: list[np.ndarray]) -> list[np.ndarray]:
    """Binary (out, in) masks for the given ordering and hidden-unit labels.

    Hidden connections are permissive (downstream label >= upstream rank or
    label); the output connection is strict (output rank > last label), which
    is required for output dim d to be independent of input dims at rank >= d.
    """
    masks: list[np.ndarray] = []
    upstream = ordering
    for m in hidden_labels:
        masks.append((m[:, None] >= upstream[None, :]).astype(np.float64))
        upstream = m
    masks.append((ordering[:, None] > upstream[None, :]).astype(np.float64))
    return masks


def build_masks(input_dim: int, hidden_sizes: list[int], seed: int | np.random.Generator) -> MaskSet:
    """Sample connectivity labels and build the binary masks.

    Labels are uniform over [1, input_dim - 1] from the seeded generator; the
    ordering is fixed to natural raster order.
    """
    if input_dim < 2:
        raise ConfigError(f"input_dim must be >= 2, got {input_dim}")
    if any(h < 1 for h in hidden_sizes):
        raise ConfigError("hidden sizes must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    ordering = np.arange(1, input_dim + 1)
    labels = [rng.integers(1, input_dim, size=h) for h in hidden_sizes]
    return MaskSet(ordering=ordering, hidden_labels=labels, masks=masks_from_labels(ordering, labels))


def check_masks(mask_set: MaskSet) -> None:
    """Raise if any composed connection path violates the ordering."""
    reach = mask_set.masks[0]
    for mask in mask_set.masks[1:]:
        reach = (mask @ reach) > 0.0
    order = mask_set.ordering
    forbidden = order[None, :] >= order[:, None]  # in-rank >= out-rank
    if np.any(reach & forbidden):
        out_d, in_d = np.argwhere(reach & forbidden)[0]
        raise ConfigError(f"mask set leaks input dim {in_d} into output dim {out_d}")


def build_made(
    input_dim: int,
    hidden_sizes: list[int],
    seed: int | np.random.Generator,
    mask_set: MaskSet | None = None,
) -> MadeModel:
    """Construct a masked network with relu hidden layers and sigmoid outputs.

    Pass an existing ``mask_set`` to give several models (e.g. one per client)
    identical connectivity while drawing fresh initial parameters.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if mask_set is None:
        mask_set = build_masks(input_dim, hidden_sizes, rng)
    check_masks(mask_set)
    dims = [input_dim, *hidden_sizes, input_dim]
    layers = []
    for i, mask in enumerate(mask_set.masks):
        activation = "sigmoid" if i == len(mask_set.masks) - 1 else "relu"
        layers.append(nn.glorot_layer(dims[i], dims[i + 1], activation, rng, mask=mask))
    return MadeModel(net=nn.Network(layers, loss_kind="bernoulli-nll"), mask_set=mask_set)


def _check_unit_interval(x: np.ndarray) -> np.ndarray:
    x = nn.as_tensor2d(x)
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ConfigError("inputs must lie in [0, 1]")
    return x


def made_forward(model: MadeModel, x: np.ndarray) -> np.ndarray:
    """Probability the model assigns to each observed dim, given earlier dims.

    With p_d the network's conditional P(x_d = 1 | x_<d), returns
    u_d = x_d * p_d + (1 - x_d) * (1 - p_d), clamped into (0, 1).
    """
    x = _check_unit_interval(x)
    p = nn.forward(model.net, x)
    u = x * p + (1.0 - x) * (1.0 - p)
    return np.clip(u, nn.PROB_FLOOR, 1.0 - nn.PROB_FLOOR)


def made_nll(model: MadeModel, x: np.ndarray) -> float:
    """Mean negative log-likelihood: batch average of -sum_d log u_d."""
    u = made_forward(model, x)
    return float(np.mean(-np.sum(np.log(u), axis=1)))


def validation_loss(model: MadeModel, x: np.ndarray) -> float:
    """The training criterion (Bernoulli NLL) evaluated without gradients."""
    x = _check_unit_interval(x)
    return nn.network_loss(model.net, x, x, np.ones(x.shape[0]))


def sample_made(model: MadeModel, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n binary vectors by ancestral sampling in rank order.

    Dim d is drawn from Bernoulli(p_d) where p_d conditions on the already
    sampled earlier-rank dims; one forward pass per dimension.
    """
    dim = model.input_dim
    x = np.zeros((n, dim))
    for d in np.argsort(model.mask_set.ordering):
        p = nn.forward(model.net, x)[:, d]
        x[:, d] = (rng.uniform(size=n) < p).astype(np.float64)
    return x


def train_made(
    model: MadeModel,
    train: np.ndarray,
    valid: np.ndarray,
    lr: float,
    max_iters: int,
    patience: int,
    rng: np.random.Generator,
    batch_size: int = 32,
) -> tuple[MadeModel, TrainLog]:
    """Minibatch SGD with early stopping on the validation loss.

    Stops once the validation loss has not improved for ``patience``
    consecutive evaluations (one per epoch) or at ``max_iters`` epochs, and
    restores the parameters of the best validation epoch.
    """
    train = _check_unit_interval(train)
    valid = _check_unit_interval(valid)
    if valid.shape[0] == 0:
        raise ConfigError("validation set is empty")
    if patience < 1:
        raise ConfigError("patience must be >= 1")

    log = TrainLog()
    best_val = np.inf
    best_params = nn.get_params(model.net)
    since_best = 0
    ones = np.ones(train.shape[0])

    for epoch in range(1, max_iters + 1):
        epoch_loss = nn.sgd_epoch(model.net, train, train, ones, lr, batch_size, rng)
        val = validation_loss(model, valid)
        log.train_loss.append(epoch_loss)
        log.val_loss.append(val)
        if val < best_val:
            best_val = val
            best_params = nn.get_params(model.net)
            log.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                log.stopped_early = True
                break

    nn.set_params(model.net, best_params)
    return model, log


# --- serialization --------------------------------------------------------

def save_made(model: MadeModel) -> bytes:
    """One blob: a JSON meta line (ordering, labels, dims) + raw snapshot."""
    meta = {
        "ordering": model.mask_set.ordering.tolist(),
        "hidden_labels": [m.tolist() for m in model.mask_set.hidden_labels],
        "hidden_sizes": [int(m.size) for m in model.mask_set.hidden_labels],
    }
    return json.dumps(meta, sort_keys=True).encode("utf-8") + b"\n" + nn.serialize_params(model.net)


def load_made(blob: bytes) -> MadeModel:
    """Rebuild a model saved by :func:`save_made`, bit-exactly."""
    newline = blob.index(b"\n")
    meta = json.loads(blob[:newline].decode("utf-8"))
    dims, vec = nn.deserialize_params(blob[newline + 1 :])
    input_dim = dims[0][1]
    ordering = np.asarray(meta["ordering"])
    hidden_labels = [np.asarray(m) for m in meta["hidden_labels"]]
    masks = masks_from_labels(ordering, hidden_labels)
    mask_set = MaskSet(ordering=ordering, hidden_labels=hidden_labels, masks=masks)

    layers = []
    for (out_dim, in_dim), mask in zip(dims, masks):
        if mask.shape != (out_dim, in_dim):
            raise ShapeError("snapshot dims do not match mask shapes")
        activation = "sigmoid" if len(layers) == len(dims) - 1 else "relu"
        layers.append(
            nn.DenseLayer(
                weights=np.zeros((out_dim, in_dim)),
                bias=np.zeros(out_dim),
                activation=activation,
                mask=mask,
            )
        )
    model = MadeModel(net=nn.Network(layers, loss_kind="bernoulli-nll"), mask_set=mask_set)
    nn.set_params(model.net, vec)
    if model.input_dim != input_dim:
        raise NumericError("inconsistent snapshot")
    return model
