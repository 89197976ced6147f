"""Federated learning with density-ratio sample weights for feature-skewed clients."""

from .data import LabeledDataset, MixtureSpec, load_idx, partition_equal, split_train_test, synth_blobs, synth_gaussian_mixture
from .errors import AggregationError, ConfigError, IdxFormatError, NumericError, ShapeError
from .federation import ClientState, ClassifierConfig, FederationState, MadeFedConfig, RunReport, WeightConfig, fedavg_aggregate, run_federated_classification, run_federated_made, run_phase1, run_phase1_raw
from .made import MadeModel, MaskSet, build_made, build_masks, made_forward, made_nll, sample_made, train_made
from .metrics import CommLedger, LeakageInput, comm_cost, effective_rounds, entropy_bits, leakage_bound
from .nn import DenseLayer, Network, backward, forward, sgd_step, weighted_ce_loss
from .ratio import PseudoDataset, SampleWeights, build_pseudo_dataset, build_pseudo_dataset_sampled, clip_normalize, estimate_weights, estimate_weights_raw, train_discriminator

__version__ = "0.1.0"

__all__ = [
    "AggregationError",
    "ClassifierConfig",
    "ClientState",
    "CommLedger",
    "ConfigError",
    "DenseLayer",
    "FederationState",
    "IdxFormatError",
    "LabeledDataset",
    "LeakageInput",
    "MadeFedConfig",
    "MadeModel",
    "MaskSet",
    "MixtureSpec",
    "Network",
    "NumericError",
    "PseudoDataset",
    "RunReport",
    "SampleWeights",
    "ShapeError",
    "WeightConfig",
    "backward",
    "build_made",
    "build_masks",
    "build_pseudo_dataset",
    "build_pseudo_dataset_sampled",
    "clip_normalize",
    "comm_cost",
    "effective_rounds",
    "entropy_bits",
    "estimate_weights",
    "estimate_weights_raw",
    "fedavg_aggregate",
    "forward",
    "leakage_bound",
    "load_idx",
    "made_forward",
    "made_nll",
    "partition_equal",
    "run_federated_classification",
    "run_federated_made",
    "run_phase1",
    "run_phase1_raw",
    "sample_made",
    "sgd_step",
    "split_train_test",
    "synth_blobs",
    "synth_gaussian_mixture",
    "train_discriminator",
    "train_made",
    "weighted_ce_loss",
]
