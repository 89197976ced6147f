"""Per-sample importance weights from a density-output discriminator.

A client turns its training samples into two aligned sets of per-dim density
outputs, one from its local estimator and one from the federated global
estimator, labels them 0/1, and trains a small binary classifier on the mix.
The classifier's class-1 probability P is then mapped to a sample weight:
either the odds P/(1-P), which estimates the global/local density ratio when
the construction is balanced, or P itself.  Weights are clipped and rescaled
to mean 1 per client.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import ConfigError
from .made import MadeModel, made_forward, sample_made

WEIGHT_MODES = ("ratio", "raw-probability")

# Keeps the odds finite when the discriminator saturates at P = 1.
MAX_PROB = 1.0 - 1e-6


@dataclass
class PseudoDataset:
    """Balanced two-class dataset of density-output vectors.

    Row i and row n+i derive from the same original sample; label 0 marks the
    local model's output, label 1 the global model's.  Exact balance makes the
    marginal class ratio 1, so the classifier odds estimate the density ratio
    directly.
    """

    inputs: np.ndarray  # (2n, D)
    labels: np.ndarray  # (2n,) in {0, 1}

    def __post_init__(self) -> None:
        self.inputs = nn.as_tensor2d(self.inputs)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.inputs.shape[0],):
            raise ConfigError("labels must align with input rows")
        n = self.inputs.shape[0]
        if n % 2 or np.sum(self.labels == 0) != n // 2 or np.sum(self.labels == 1) != n // 2:
            raise ConfigError("pseudo dataset must hold equally many rows per label")


@dataclass
class SampleWeights:
    """Per-sample weights for one client, aligned with its training set."""

    values: np.ndarray
    mode: str
    clip_lo: float
    clip_hi: float

    def __post_init__(self) -> None:
        if self.mode not in WEIGHT_MODES:
            raise ConfigError(f"unknown weight mode {self.mode!r}")
        self.values = np.asarray(self.values, dtype=np.float64)


def build_pseudo_dataset(
    local: MadeModel, global_model: MadeModel, x_k: np.ndarray
) -> PseudoDataset:
    """Paired construction: evaluate both models on the client data and stack.

    Useful for diagnostics (rows i and n+i encode the same sample), but note
    the two halves live on disjoint sets of points whenever the models differ,
    so a capable classifier can drive them apart; the weight pipeline uses
    :func:`build_pseudo_dataset_sampled` instead.
    """
    if local.input_dim != global_model.input_dim:
        raise ConfigError(
            f"local model dim {local.input_dim} != global model dim {global_model.input_dim}"
        )
    u_local = made_forward(local, x_k)
    u_global = made_forward(global_model, x_k)
    n = u_local.shape[0]
    return PseudoDataset(
        inputs=np.vstack([u_local, u_global]),
        labels=np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)]),
    )


def build_pseudo_dataset_sampled(
    local: MadeModel,
    global_model: MadeModel,
    x_k: np.ndarray,
    rng: np.random.Generator,
) -> PseudoDataset:
    """Sampled construction used by the weight pipeline.

    Label 0 is the client's own data, label 1 an equally sized draw from the
    global density model, both passed through the *local* model's encoding.
    Real data and model draws then share the same input atoms, so the
    converged classifier's class-1 odds estimate the global/local probability
    ratio instead of separating the classes.
    """
    if local.input_dim != global_model.input_dim:
        raise ConfigError(
            f"local model dim {local.input_dim} != global model dim {global_model.input_dim}"
        )
    x_k = nn.as_tensor2d(x_k)
    n = x_k.shape[0]
    drawn = sample_made(global_model, n, rng)
    return PseudoDataset(
        inputs=np.vstack([made_forward(local, x_k), made_forward(local, drawn)]),
        labels=np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)]),
    )


def train_discriminator(
    ds: PseudoDataset,
    seed: int | np.random.Generator,
    hidden: int = 100,
    lr: float = 0.01,
    max_epochs: int = 500,
    batch_size: int = 32,
    plateau_epochs: int = 10,
    plateau_rel: float = 1e-4,
) -> nn.Network:
    """Train the two-class discriminator until the loss plateaus.

    One 100-unit relu hidden layer, softmax pair on top, SGD at lr 0.01.
    Training stops when the full-set loss improved by less than ``plateau_rel``
    (relatively) over the last ``plateau_epochs`` epochs, or at ``max_epochs``.
    """
    if np.unique(ds.labels).size < 2:
        raise ConfigError("discriminator needs both labels present")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    dim = ds.inputs.shape[1]
    net = nn.Network(
        [
            nn.glorot_layer(dim, hidden, "relu", rng),
            nn.glorot_layer(hidden, 2, "softmax", rng),
        ],
        loss_kind="weighted-cross-entropy",
    )
    ones = np.ones(ds.inputs.shape[0])
    losses: list[float] = []
    for _ in range(max_epochs):
        nn.sgd_epoch(net, ds.inputs, ds.labels, ones, lr, batch_size, rng)
        losses.append(nn.network_loss(net, ds.inputs, ds.labels, ones))
        if len(losses) > plateau_epochs:
            ref = losses[-1 - plateau_epochs]
            if (ref - losses[-1]) / max(abs(ref), 1e-12) < plateau_rel:
                break
    return net


def class1_probability(h: nn.Network, inputs: np.ndarray) -> np.ndarray:
    """The discriminator's probability that a row came from the global model."""
    return nn.forward(h, inputs)[:, 1]


def weights_from_probability(
    p: np.ndarray, mode: str, clip_lo: float, clip_hi: float
) -> SampleWeights:
    """Map class-1 probabilities to clipped, mean-normalized weights."""
    if mode == "ratio":
        p = np.minimum(p, MAX_PROB)
        raw = p / (1.0 - p)
    elif mode == "raw-probability":
        raw = np.asarray(p, dtype=np.float64)
    else:
        raise ConfigError(f"unknown weight mode {mode!r}")
    return SampleWeights(
        values=clip_normalize(raw, clip_lo, clip_hi),
        mode=mode,
        clip_lo=clip_lo,
        clip_hi=clip_hi,
    )


def estimate_weights(
    h: nn.Network,
    local: MadeModel,
    x_k: np.ndarray,
    mode: str = "ratio",
    clip_lo: float = 0.01,
    clip_hi: float = 100.0,
) -> SampleWeights:
    """Weights for the client's samples from their local density outputs."""
    u = made_forward(local, x_k)
    return weights_from_probability(class1_probability(h, u), mode, clip_lo, clip_hi)


def estimate_weights_raw(
    x_k: np.ndarray,
    pooled_global: np.ndarray,
    seed: int | np.random.Generator,
    mode: str = "ratio",
    clip_lo: float = 0.01,
    clip_hi: float = 100.0,
    **discriminator_kwargs,
) -> SampleWeights:
    """Ablation variant: discriminate raw local samples against a pooled draw.

    ``pooled_global`` must hold exactly as many rows as ``x_k`` (sampled
    without replacement from the union of all clients' data) so the balanced
    construction still applies.
    """
    x_k = nn.as_tensor2d(x_k)
    pooled_global = nn.as_tensor2d(pooled_global)
    if pooled_global.shape[0] != x_k.shape[0]:
        raise ConfigError(
            f"pooled sample has {pooled_global.shape[0]} rows, client has {x_k.shape[0]}"
        )
    n = x_k.shape[0]
    ds = PseudoDataset(
        inputs=np.vstack([x_k, pooled_global]),
        labels=np.concatenate([np.zeros(n, dtype=np.int64), np.ones(n, dtype=np.int64)]),
    )
    h = train_discriminator(ds, seed, **discriminator_kwargs)
    return weights_from_probability(class1_probability(h, x_k), mode, clip_lo, clip_hi)


def clip_normalize(values: np.ndarray, clip_lo: float, clip_hi: float) -> np.ndarray:
    """Clamp into [clip_lo, clip_hi] and rescale so the mean is exactly 1."""
    if clip_lo <= 0.0 or clip_hi < clip_lo:
        raise ConfigError(f"invalid clip bounds [{clip_lo}, {clip_hi}]")
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot normalize an empty weight vector")
    if np.all(values == 0.0):
        raise ConfigError("cannot normalize all-zero weights")
    clipped = np.clip(values, clip_lo, clip_hi)
    return clipped / clipped.mean()
