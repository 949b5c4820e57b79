"""Closed-form checks of the averaged-parameter server loss.

For a one-weight linear model and two clients A/B, the server loss at
the averaged weight differs from the average of the client losses by
an exact, sign-analyzable residual:

    squared error:  residual = ((wa+wb)/2)^2 x^2 - (wa^2+wb^2)/2 x^2
    log loss:       residual = y * (log AM(wa,wb) - log GM(wa,wb))

Both vanish as the weights approach each other (and the log-loss
residual is non-negative for y >= 0 by AM >= GM), which is what makes
"server loss ~ average client loss" a good approximation near zero.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

IDENTITY_TOL = 1e-12


class MseIdentity(NamedTuple):
    server_loss: float
    loss_a: float
    loss_b: float
    residual: float


class CeIdentity(NamedTuple):
    server_loss: float
    avg_client_loss: float
    residual: float


class EmpiricalGap(NamedTuple):
    loss_at_avg_params: float
    avg_client_loss: float
    gap: float


def mse_server_identity(w_a: float, w_b: float, x: float, y: float) -> MseIdentity:
    """Squared-error losses at w_a, w_b, and their average weight.

    Verifies the closed-form residual before returning; inputs are
    expected at O(1) magnitudes for the 1e-12 absolute check.
    """
    j_a = (y - w_a * x) ** 2
    j_b = (y - w_b * x) ** 2
    w = 0.5 * (w_a + w_b)
    j = (y - w * x) ** 2
    residual = j - 0.5 * (j_a + j_b)
    closed = (w * w - 0.5 * (w_a * w_a + w_b * w_b)) * x * x
    if abs(residual - closed) > IDENTITY_TOL:
        raise ArithmeticError(
            f"mse residual {residual!r} differs from closed form {closed!r}")
    return MseIdentity(float(j), float(j_a), float(j_b), float(residual))


def ce_server_identity(w_a: float, w_b: float, x, y) -> CeIdentity:
    """Log losses at w_a, w_b, and their average weight.

    x and y may be scalars or arrays (summed); weights and x must be
    positive so the logs exist.
    """
    if w_a <= 0 or w_b <= 0:
        raise ValueError("weights must be positive")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    am = 0.5 * (w_a + w_b)
    gm = float(np.sqrt(w_a * w_b))
    j = float(np.sum(y * np.log(am * x)))
    j_a = float(np.sum(y * np.log(w_a * x)))
    j_b = float(np.sum(y * np.log(w_b * x)))
    avg = 0.5 * (j_a + j_b)
    residual = j - avg
    closed = float(np.sum(y) * (np.log(am) - np.log(gm)))
    if abs(residual - closed) > IDENTITY_TOL:
        raise ArithmeticError(
            f"ce residual {residual!r} differs from closed form {closed!r}")
    return CeIdentity(j, avg, residual)


def empirical_server_loss_check(spec, client_batches, client_params) -> EmpiricalGap:
    """Diagnostic: loss of the mean parameter vector on the pooled data
    vs the mean of each client's loss at its own parameters."""
    from . import nn

    if len(client_batches) < 2 or len(client_batches) != len(client_params):
        raise ValueError("need >= 2 clients with one parameter vector each")
    avg_params = np.mean(np.stack([np.asarray(p, dtype=np.float64)
                                   for p in client_params]), axis=0)
    union = nn.Batch(
        np.concatenate([b.inputs for b in client_batches]),
        np.concatenate([np.asarray(b.targets) for b in client_batches]),
    )
    pooled = nn.loss(spec, nn.forward(spec, avg_params, union), union.targets)
    own = [
        nn.loss(spec, nn.forward(spec, p, b), b.targets)
        for p, b in zip(client_params, client_batches)
    ]
    avg_own = float(np.mean(own))
    return EmpiricalGap(pooled, avg_own, abs(pooled - avg_own))
