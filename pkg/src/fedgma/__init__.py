"""Federated optimization simulator: plain federated averaging and its
gradient-masked variant, with colored-digit data synthesis and
loss-surface analysis utilities."""

from .data import ClientState, ColoredDataset, RawDataset
from .experiment import ExperimentConfig, MetricsRow, evaluate, run_experiment
from .federation import (
    FederationConfig,
    RoundResult,
    ServerState,
    aggregate_masked_grads,
    aggregate_params,
    client_update,
    compute_mask,
    select_clients,
    server_round_fedavg,
    server_round_gma,
)
from .nn import Batch, ModelSpec, backward, forward, init_params, loss, sgd_step

__all__ = [
    "Batch",
    "ClientState",
    "ColoredDataset",
    "ExperimentConfig",
    "FederationConfig",
    "MetricsRow",
    "ModelSpec",
    "RawDataset",
    "RoundResult",
    "ServerState",
    "aggregate_masked_grads",
    "aggregate_params",
    "backward",
    "client_update",
    "compute_mask",
    "evaluate",
    "forward",
    "init_params",
    "loss",
    "run_experiment",
    "select_clients",
    "server_round_fedavg",
    "server_round_gma",
    "sgd_step",
]

__version__ = "0.1.0"
