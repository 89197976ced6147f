"""In-process federation state machine.

Owns the client roster and the two round loops: federated training of the
global density model (phase 1) and size-weighted FedAvg for the classifier
(phase 2), weighted or not depending on the variant.  Clients never share
data; each round they receive the global parameter snapshot, train locally,
and return parameters for aggregation in ascending client-id order, which
keeps full runs bit-reproducible from (seed, config).
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field

import numpy as np

from . import made as made_mod
from . import nn
from .data import LabeledDataset
from .errors import AggregationError, ConfigError, NumericError
from .metrics import CommLedger, LeakageInput, cost_summary, effective_rounds, empirical_distribution, leakage_bound
from .ratio import SampleWeights, build_pseudo_dataset_sampled, estimate_weights, estimate_weights_raw, train_discriminator
from .rng import substream

VARIANTS = ("feddisk", "feddisk-ab", "fedavg")

# A validation loss this much above its starting value means the federated
# density training is diverging; abort instead of looping to the cap.
DIVERGENCE_FACTOR = 10.0


@dataclass
class ClientState:
    """One participant: its data and whatever phase artifacts it has produced."""

    id: int
    train: LabeledDataset
    test: LabeledDataset
    local_made: made_mod.MadeModel | None = None
    weights: SampleWeights | None = None
    model: nn.Network | None = None
    made_train: np.ndarray | None = None
    made_valid: np.ndarray | None = None

    @property
    def n_k(self) -> int:
        return self.train.n + self.test.n


@dataclass
class FederationState:
    clients: list[ClientState]
    global_params: np.ndarray | None = None
    round: int = 0
    ledger: CommLedger = field(default_factory=CommLedger)

    def __post_init__(self) -> None:
        if not self.clients:
            raise ConfigError("federation needs at least one client")
        for i, c in enumerate(self.clients):
            if c.id != i:
                raise ConfigError("client ids must be 0..K-1 in order")

    @property
    def total_samples(self) -> int:
        return sum(c.n_k for c in self.clients)


@dataclass
class MadeFedConfig:
    """Phase-1 hyperparameters (density models)."""

    hidden_sizes: list[int]
    lr: float = 0.01
    local_iters: int = 2
    global_iters: int = 100
    patience: int = 3
    batch_size: int = 32
    val_fraction: float = 0.1
    local_max_iters: int = 200
    local_patience: int = 3


@dataclass
class ClassifierConfig:
    """Phase-2 hyperparameters (classification models)."""

    hidden_sizes: list[int]
    lr: float = 0.01
    local_iters: int = 2
    global_iters: int = 100
    batch_size: int = 32


@dataclass
class WeightConfig:
    """How per-sample weights are derived from discriminator probabilities."""

    mode: str = "ratio"
    clip_lo: float = 0.01
    clip_hi: float = 100.0
    disc_hidden: int = 100
    disc_lr: float = 0.01
    disc_max_epochs: int = 500
    disc_batch_size: int = 32


@dataclass
class MadeRoundLog:
    """Global density-model curves; index 0 is the pre-training state."""

    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_round: int = 0
    rounds_run: int = 0
    stopped_early: bool = False


@dataclass
class Phase1Result:
    global_made: made_mod.MadeModel
    made_log: MadeRoundLog
    local_logs: list[made_mod.TrainLog]
    weights: list[SampleWeights]
    leakage_bits: list[float]


@dataclass
class RunReport:
    """Serializable record of one classification-phase run."""

    variant: str
    config: dict
    accuracy: list[float]
    train_loss: list[float]
    per_client_accuracy: list[float]
    accuracy_percentiles: dict
    ledger: dict
    leakage_bits: list[float]
    dataset_signature: str
    rounds_run: int

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "config": self.config,
            "accuracy": self.accuracy,
            "train_loss": self.train_loss,
            "per_client_accuracy": self.per_client_accuracy,
            "accuracy_percentiles": self.accuracy_percentiles,
            "ledger": self.ledger,
            "leakage_bits": self.leakage_bits,
            "dataset_signature": self.dataset_signature,
            "rounds_run": self.rounds_run,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)


def dataset_signature(state: FederationState) -> str:
    """Content hash of all client datasets, in client-id order."""
    h = hashlib.sha256()
    for c in state.clients:
        for ds in (c.train, c.test):
            h.update(ds.images.tobytes())
            h.update(ds.labels.tobytes())
    return h.hexdigest()


def client_sizes(state: FederationState) -> list[int]:
    return [c.n_k for c in state.clients]


def fedavg_aggregate(params_list: list[np.ndarray], sizes: list[int]) -> np.ndarray:
    """Size-weighted parameter mean, accumulated in ascending client-id order.

    Callers pass both lists in client-id order; the aggregate is
    sum_k (N_k / N) * params_k.
    """
    if len(params_list) != len(sizes) or not params_list:
        raise AggregationError("need one parameter snapshot and size per client")
    if any(s <= 0 for s in sizes):
        raise AggregationError("client sizes must be > 0")
    shape = params_list[0].shape
    total = float(sum(sizes))
    acc = np.zeros(shape)
    for k, (params, size) in enumerate(zip(params_list, sizes)):
        if params.shape != shape:
            raise AggregationError(
                f"client {k} snapshot shape {params.shape} != expected {shape}"
            )
        acc += (size / total) * params
    return acc


def accuracy(net: nn.Network, ds: LabeledDataset) -> float:
    """Top-1 accuracy of the network on a labeled dataset."""
    if ds.n == 0:
        raise ConfigError("cannot evaluate accuracy on an empty dataset")
    pred = np.argmax(nn.forward(net, ds.images), axis=1)
    return float(np.mean(pred == ds.labels))


def local_train_round(
    client: ClientState,
    global_params: np.ndarray,
    local_iters: int,
    lr: float,
    batch_size: int,
    use_weights: bool,
    rng: np.random.Generator,
) -> np.ndarray:
    """Load the global snapshot, run local epochs of weighted SGD, return params."""
    if client.model is None:
        raise ConfigError(f"client {client.id} has no classifier model")
    nn.set_params(client.model, global_params)
    if local_iters == 0:
        return global_params.copy()
    if use_weights:
        if client.weights is None:
            raise ConfigError(f"client {client.id} has no sample weights")
        alpha = client.weights.values
    else:
        alpha = np.ones(client.train.n)
    try:
        for _ in range(local_iters):
            nn.sgd_epoch(
                client.model, client.train.images, client.train.labels, alpha, lr, batch_size, rng
            )
    except NumericError as e:
        raise NumericError(f"client {client.id}: {e}") from e
    return nn.get_params(client.model)


def prepare_made_splits(state: FederationState, val_fraction: float, seed: int) -> None:
    """Carve a per-client validation slice out of the training images."""
    if not 0.0 < val_fraction < 1.0:
        raise ConfigError("val_fraction must lie in (0, 1)")
    for c in state.clients:
        if c.train.n < 2:
            raise ConfigError(f"client {c.id} has too little data to hold out validation")
        order = substream(seed, "phase1", "madesplit", c.id).permutation(c.train.n)
        n_val = max(1, int(round(val_fraction * c.train.n)))
        n_val = min(n_val, c.train.n - 1)
        c.made_valid = c.train.images[np.sort(order[:n_val])]
        c.made_train = c.train.images[np.sort(order[n_val:])]


def run_federated_made(
    state: FederationState, config: MadeFedConfig, seed: int
) -> tuple[made_mod.MadeModel, MadeRoundLog]:
    """Phase-1 federated loop for the global density model.

    Every round: broadcast global parameters, each client runs local epochs on
    its own data, the server aggregates by sample count.  Stops when the
    pooled validation loss has not improved for ``patience`` rounds (keeping
    the best round's parameters) or at the round cap.
    """
    for c in state.clients:
        if c.made_train is None or c.made_valid is None:
            raise ConfigError("call prepare_made_splits before run_federated_made")
    dim = state.clients[0].train.dim
    mask_set = made_mod.build_masks(dim, config.hidden_sizes, substream(seed, "phase1", "masks"))
    global_made = made_mod.build_made(
        dim, config.hidden_sizes, substream(seed, "phase1", "global-init"), mask_set=mask_set
    )
    workers = {c.id: copy.deepcopy(global_made) for c in state.clients}
    sizes = client_sizes(state)

    train_all = np.vstack([c.made_train for c in state.clients])
    valid_all = np.vstack([c.made_valid for c in state.clients])
    ones_by_client = {c.id: np.ones(c.made_train.shape[0]) for c in state.clients}

    log = MadeRoundLog()
    log.train_loss.append(made_mod.validation_loss(global_made, train_all))
    log.val_loss.append(made_mod.validation_loss(global_made, valid_all))
    initial_val = log.val_loss[0]
    best_val = initial_val
    best_params = nn.get_params(global_made.net)
    since_best = 0

    global_params = nn.get_params(global_made.net)
    for t in range(1, config.global_iters + 1):
        snapshots = []
        for c in state.clients:
            worker = workers[c.id]
            nn.set_params(worker.net, global_params)
            rng = substream(seed, "phase1", "made-round", t, "client", c.id)
            for _ in range(config.local_iters):
                nn.sgd_epoch(
                    worker.net, c.made_train, c.made_train, ones_by_client[c.id],
                    config.lr, config.batch_size, rng,
                )
            snapshots.append(nn.get_params(worker.net))
        global_params = fedavg_aggregate(snapshots, sizes)
        nn.set_params(global_made.net, global_params)

        val = made_mod.validation_loss(global_made, valid_all)
        log.train_loss.append(made_mod.validation_loss(global_made, train_all))
        log.val_loss.append(val)
        if not np.isfinite(val) or val > DIVERGENCE_FACTOR * initial_val:
            raise NumericError(
                f"federated density training diverged at round {t}: "
                f"validation loss {val:.4g} vs initial {initial_val:.4g}"
            )
        if val < best_val:
            best_val = val
            best_params = global_params
            log.best_round = t
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                log.stopped_early = True
                break

    nn.set_params(global_made.net, best_params)
    log.rounds_run = len(log.val_loss) - 1
    return global_made, log


def run_phase1(
    state: FederationState,
    made_cfg: MadeFedConfig,
    weight_cfg: WeightConfig,
    seed: int,
) -> Phase1Result:
    """Full sample-weight computation: local density models, the federated
    global one, then a per-client discriminator over their outputs."""
    prepare_made_splits(state, made_cfg.val_fraction, seed)
    dim = state.clients[0].train.dim
    mask_set = made_mod.build_masks(dim, made_cfg.hidden_sizes, substream(seed, "phase1", "masks"))

    local_logs = []
    for c in state.clients:
        model = made_mod.build_made(
            dim, made_cfg.hidden_sizes, substream(seed, "phase1", "local-init", c.id),
            mask_set=mask_set,
        )
        model, log = made_mod.train_made(
            model, c.made_train, c.made_valid,
            lr=made_cfg.lr,
            max_iters=made_cfg.local_max_iters,
            patience=made_cfg.local_patience,
            rng=substream(seed, "phase1", "local-train", c.id),
            batch_size=made_cfg.batch_size,
        )
        c.local_made = model
        local_logs.append(log)

    global_made, made_log = run_federated_made(state, made_cfg, seed)

    weights = []
    for c in state.clients:
        pseudo = build_pseudo_dataset_sampled(
            c.local_made, global_made, c.train.images,
            substream(seed, "phase1", "pseudo", c.id),
        )
        h = train_discriminator(
            pseudo,
            substream(seed, "phase1", "disc", c.id),
            hidden=weight_cfg.disc_hidden,
            lr=weight_cfg.disc_lr,
            max_epochs=weight_cfg.disc_max_epochs,
            batch_size=weight_cfg.disc_batch_size,
        )
        c.weights = estimate_weights(
            h, c.local_made, c.train.images,
            mode=weight_cfg.mode, clip_lo=weight_cfg.clip_lo, clip_hi=weight_cfg.clip_hi,
        )
        weights.append(c.weights)

    state.ledger.s_made = nn.param_count(global_made.net)
    state.ledger.ecr_made = made_log.rounds_run
    return Phase1Result(
        global_made=global_made,
        made_log=made_log,
        local_logs=local_logs,
        weights=weights,
        leakage_bits=client_leakage_bits(state),
    )


def run_phase1_raw(
    state: FederationState, weight_cfg: WeightConfig, seed: int
) -> list[SampleWeights]:
    """Ablation weights: discriminate each client's raw data against a pooled
    draw of the same size from the union of all clients' training data."""
    union = np.vstack([c.train.images for c in state.clients])
    weights = []
    for c in state.clients:
        pool_rng = substream(seed, "phase1", "raw-pool", c.id)
        idx = pool_rng.choice(union.shape[0], size=c.train.n, replace=False)
        c.weights = estimate_weights_raw(
            c.train.images,
            union[idx],
            substream(seed, "phase1", "raw-disc", c.id),
            mode=weight_cfg.mode,
            clip_lo=weight_cfg.clip_lo,
            clip_hi=weight_cfg.clip_hi,
            hidden=weight_cfg.disc_hidden,
            lr=weight_cfg.disc_lr,
            max_epochs=weight_cfg.disc_max_epochs,
            batch_size=weight_cfg.disc_batch_size,
        )
        weights.append(c.weights)
    state.ledger.s_made = 0
    state.ledger.ecr_made = 0
    return weights


def client_leakage_bits(state: FederationState) -> list[float]:
    """Per-client leakage bound kappa_k * H(empirical law of the client's data)."""
    total = state.total_samples
    bounds = []
    for c in state.clients:
        rows = np.vstack([c.train.images, c.test.images]) if c.test.n else c.train.images
        dist = empirical_distribution(rows)
        bounds.append(leakage_bound(LeakageInput(kappa=c.n_k / total, distribution=dist)))
    return bounds


def _percentiles(values: list[float]) -> dict:
    arr = np.asarray(values)
    return {
        "min": float(arr.min()),
        "p25": float(np.percentile(arr, 25)),
        "median": float(np.percentile(arr, 50)),
        "p75": float(np.percentile(arr, 75)),
        "max": float(arr.max()),
    }


def run_federated_classification(
    state: FederationState,
    config: ClassifierConfig,
    variant: str,
    seed: int,
    config_echo: dict | None = None,
) -> RunReport:
    """Phase-2 round loop; produces the serializable run report.

    ``feddisk`` and ``feddisk-ab`` train with the weights already installed on
    the clients; ``fedavg`` ignores weights.  Given the same seed, a feddisk
    run whose weights are all ones is bit-identical to the fedavg baseline.
    """
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    use_weights = variant != "fedavg"
    if use_weights:
        for c in state.clients:
            if c.weights is None:
                raise ConfigError(f"variant {variant} needs sample weights on client {c.id}")

    dim = state.clients[0].train.dim
    arity = state.clients[0].train.label_arity
    init_rng = substream(seed, "phase2", "init")
    dims = [dim, *config.hidden_sizes, arity]
    layers = [
        nn.glorot_layer(dims[i], dims[i + 1], "relu" if i < len(dims) - 2 else "softmax", init_rng)
        for i in range(len(dims) - 1)
    ]
    proto = nn.Network(layers, loss_kind="weighted-cross-entropy")
    for c in state.clients:
        c.model = copy.deepcopy(proto)
    scratch = copy.deepcopy(proto)
    global_params = nn.get_params(proto)
    sizes = client_sizes(state)
    train_total = sum(c.train.n for c in state.clients)

    acc_curve: list[float] = []
    loss_curve: list[float] = []
    per_client_acc: list[float] = []
    for t in range(1, config.global_iters + 1):
        snapshots = [
            local_train_round(
                c, global_params, config.local_iters, config.lr, config.batch_size,
                use_weights, substream(seed, "phase2", "round", t, "client", c.id),
            )
            for c in state.clients
        ]
        global_params = fedavg_aggregate(snapshots, sizes)
        state.round = t

        nn.set_params(scratch, global_params)
        per_client_acc = [accuracy(scratch, c.test) for c in state.clients]
        acc_curve.append(float(np.mean(per_client_acc)))
        loss = 0.0
        for c in state.clients:
            alpha = c.weights.values if use_weights else np.ones(c.train.n)
            loss += (c.train.n / train_total) * nn.network_loss(
                scratch, c.train.images, c.train.labels, alpha
            )
        if not np.isfinite(loss):
            raise NumericError(f"classification training diverged at round {t}")
        loss_curve.append(float(loss))

    state.global_params = global_params
    best = max(acc_curve)
    ledger = CommLedger(
        s_made=state.ledger.s_made if variant == "feddisk" else 0,
        s_cls=nn.param_count(proto),
        ecr_made=state.ledger.ecr_made if variant == "feddisk" else 0,
        ecr_cls=effective_rounds(acc_curve, best) or len(acc_curve),
    )
    return RunReport(
        variant=variant,
        config=dict(config_echo or {}),
        accuracy=acc_curve,
        train_loss=loss_curve,
        per_client_accuracy=per_client_acc,
        accuracy_percentiles=_percentiles(per_client_acc),
        ledger=cost_summary(ledger),
        leakage_bits=client_leakage_bits(state),
        dataset_signature=dataset_signature(state),
        rounds_run=len(acc_curve),
    )
