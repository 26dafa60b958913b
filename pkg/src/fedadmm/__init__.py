"""Inexact federated ADMM with partial participation, plus FedAvg/FedProx/FedAlt/FedSim baselines."""

from .config import RunConfig, load_config
from .data import FederatedDataset, GenSpec, generate_linreg, load_dataset, load_libsvm, partition, save_dataset
from .harness import median_sweep, run_experiment
from .model import ClientShard, ModelKind, lipschitz_estimate, local_grad, local_loss

__version__ = "0.1.0"

__all__ = [
    "ClientShard", "FederatedDataset", "GenSpec", "ModelKind", "RunConfig", "generate_linreg",
    "lipschitz_estimate", "load_config", "load_dataset", "load_libsvm", "local_grad", "local_loss",
    "median_sweep", "partition", "run_experiment", "save_dataset",
]
