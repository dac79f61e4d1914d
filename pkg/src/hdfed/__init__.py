"""Differentially private hyperdimensional classifiers trained over a ring of clients."""

from .accountant import (
    NoiseLedger,
    PrivacyParams,
    blackbox_cumulative_variance,
    draw_noise,
    incremental_variance,
    required_variance,
)
from .datasets import Dataset, PartitionPlan, load, partition, synthetic
from .errors import (
    ConfigError,
    DataError,
    HDFedError,
    InvariantError,
    LoadError,
    PartitionError,
    ProtocolError,
)
from .experiments import ExperimentConfig, noise_table, run_experiment, run_sweep
from .federation import Client, ModelState, evaluate, run_federation
from .hd import EncoderBasis, encode, form_class_prototypes, predict, retrain_pass

__version__ = "0.1.0"
