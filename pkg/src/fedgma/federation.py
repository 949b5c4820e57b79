"""Federated protocol: local client training, sign-agreement masking,
weighted aggregation, and the server round for both algorithms.

A round executes the sampled clients in client-id order (results are
order-independent, so they may equally run concurrently), aggregates
parameters weighted by sample counts, and -- for the gradient-masked
variant -- takes one extra server step along the masked, weighted
average of the client gradients:

    w_t = avg_k(w^k) - server_lr * avg_k(mask * grad^k)

The mask keeps a component only when at least ceil(threshold * k) of
the k participating clients agree on its gradient sign (zeros count
toward neither sign). Plain federated averaging is the same round with
the gradient term dropped.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .data import ClientState

GRADIENT_SOURCES = ("last-step", "pseudo-gradient")


@dataclass(frozen=True)
class FederationConfig:
    """Aggregation hyperparameters shared by every round."""

    client_lr: float
    server_lr: float
    local_epochs: int
    mask_threshold: float
    clients_per_round: int
    batch_size: int = 64
    gradient_source: str = "last-step"

    def __post_init__(self):
        if not self.client_lr > 0:
            raise ValueError("client_lr must be positive")
        if self.server_lr < 0:
            raise ValueError("server_lr must be non-negative")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be at least 1")
        if not 0.0 <= self.mask_threshold <= 1.0:
            raise ValueError("mask_threshold must be in [0, 1]")
        if self.clients_per_round < 1:
            raise ValueError("clients_per_round must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.gradient_source not in GRADIENT_SOURCES:
            raise ValueError(f"unknown gradient_source {self.gradient_source!r}")


@dataclass(frozen=True)
class ServerState:
    round: int
    params: np.ndarray
    config: FederationConfig


@dataclass(frozen=True)
class RoundResult:
    """What one client reports back: its last local gradient (or the
    pseudo-gradient), its final parameters, and its sample count."""

    client_id: int
    grad: np.ndarray
    params: np.ndarray
    sample_count: int
    train_loss: float


def _shard_arrays(shard) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(shard, "flat_inputs"):
        return shard.flat_inputs(), shard.labels
    return shard.inputs, shard.targets  # nn.Batch-like toy shards


def client_update(w_server: np.ndarray, client: ClientState, spec: nn.ModelSpec,
                  client_lr: float, local_epochs: int, seed,
                  batch_size: int = 64,
                  gradient_source: str = "last-step") -> RoundResult:
    """Run local_epochs of seeded minibatch SGD from the server params.

    One epoch is a full shuffled pass over the shard (final partial
    minibatch included). Returns the gradient of the last minibatch at
    its pre-update parameters, or (w_start - w_end) / client_lr under
    the pseudo-gradient setting, plus the final local parameters.
    """
    if local_epochs < 1:
        raise ValueError("local_epochs must be at least 1")
    if gradient_source not in GRADIENT_SOURCES:
        raise ValueError(f"unknown gradient_source {gradient_source!r}")
    inputs, targets = _shard_arrays(client.shard)
    if len(inputs) == 0:
        raise ValueError("client shard is empty")
    rng = np.random.default_rng(seed)
    w_start = np.asarray(w_server, dtype=np.float64)
    w = w_start
    last_grad = None
    losses = []
    for _ in range(local_epochs):
        order = rng.permutation(len(inputs))
        for lo in range(0, len(order), batch_size):
            idx = order[lo:lo + batch_size]
            loss_val, grad = nn.backward(spec, w, nn.Batch(inputs[idx], targets[idx]))
            w = nn.sgd_step(w, grad, client_lr)
            last_grad = grad
            losses.append(loss_val)
    if gradient_source == "pseudo-gradient":
        reported = (w_start - w) / client_lr
    else:
        reported = last_grad
    return RoundResult(
        client_id=client.client_id,
        grad=reported,
        params=w,
        sample_count=client.sample_count,
        train_loss=float(np.mean(losses)),
    )


def compute_mask(grads, threshold: float) -> np.ndarray:
    """0/1 vector: component j survives iff |sum_k sign(g_j^k)| >= threshold*k."""
    g = np.asarray(grads, dtype=np.float64)
    if g.ndim != 2:
        raise ValueError("expected a (clients, dim) gradient stack")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must be in [0, 1]")
    k = g.shape[0]
    agreement = np.abs(np.sign(g).sum(axis=0))
    return (agreement >= threshold * k).astype(np.float64)


def _weights(results: Sequence[RoundResult]) -> np.ndarray:
    if not results:
        raise ValueError("no round results to aggregate")
    counts = np.array([r.sample_count for r in results], dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("zero total sample count")
    return counts / total


def aggregate_params(results: Sequence[RoundResult]) -> np.ndarray:
    """Sample-count-weighted average of the client parameter vectors."""
    weights = _weights(results)
    stack = np.stack([r.params for r in results])
    if stack.ndim != 2:
        raise ValueError("client parameter vectors must share one length")
    return weights @ stack


def aggregate_masked_grads(results: Sequence[RoundResult], threshold: float) -> np.ndarray:
    """Weighted average of the client gradients after sign-agreement masking."""
    weights = _weights(results)
    stack = np.stack([r.grad for r in results])
    if stack.ndim != 2:
        raise ValueError("client gradient vectors must share one length")
    mask = compute_mask(stack, threshold)
    return weights @ (stack * mask)


def select_clients(total: int, per_round: int, seed, round_index: int) -> list[int]:
    """Uniform sample without replacement, deterministic in (seed, round)."""
    if not 1 <= per_round <= total:
        raise ValueError(f"cannot pick {per_round} of {total} clients")
    rng = np.random.default_rng([_coerce_seed(seed), round_index])
    return sorted(rng.choice(total, size=per_round, replace=False).tolist())


def _coerce_seed(seed) -> int:
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    raise ValueError("seed must be an integer")


def _run_clients(state: ServerState, clients: Sequence[ClientState],
                 spec: nn.ModelSpec, seed) -> list[RoundResult]:
    cfg = state.config
    results = []
    for client in sorted(clients, key=lambda c: c.client_id):
        results.append(client_update(
            state.params, client, spec,
            client_lr=cfg.client_lr,
            local_epochs=cfg.local_epochs,
            seed=[_coerce_seed(seed), state.round, client.client_id],
            batch_size=cfg.batch_size,
            gradient_source=cfg.gradient_source,
        ))
    return results


def server_round_gma(state: ServerState, clients: Sequence[ClientState],
                     spec: nn.ModelSpec, seed) -> tuple[ServerState, list[RoundResult]]:
    """One gradient-masked averaging round; returns the advanced state
    plus the per-client results (for metrics)."""
    if not clients:
        raise ValueError("need at least one client per round")
    results = _run_clients(state, clients, spec, seed)
    w = aggregate_params(results)
    grad = aggregate_masked_grads(results, state.config.mask_threshold)
    new_params = w - state.config.server_lr * grad
    return dataclasses.replace(state, round=state.round + 1, params=new_params), results


def server_round_fedavg(state: ServerState, clients: Sequence[ClientState],
                        spec: nn.ModelSpec, seed) -> tuple[ServerState, list[RoundResult]]:
    """One plain federated-averaging round (no gradient term)."""
    if not clients:
        raise ValueError("need at least one client per round")
    results = _run_clients(state, clients, spec, seed)
    w = aggregate_params(results)
    return dataclasses.replace(state, round=state.round + 1, params=w), results
