"""Loss terms and their combination.

total = l_pred + h * l_harden + alpha * l_balance

l_pred    mean cross-entropy of the softmax over final logits.
l_harden  Bernoulli entropy of every node activation, summed over nodes and
          averaged over the batch (a flag switches to the plain batch sum).
          Pushing this down drives activations toward {0,1} so the soft
          training forward converges to the hard inference forward.
l_balance 2^d * sum_i f_i * P_i where f_i is the fraction of the batch whose
          largest coefficient picks leaf i (a constant per batch, no
          gradient) and P_i is the batch mean of c_i (carries the gradient).
          Uniform routing scores 1, fully collapsed routing scores 2^d.

The functions here operate on per-sample ForwardTraces and are the slow,
obviously-correct reference used by tests and gradient checking. The training
kernels compute the same quantities batched.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError
from .model import forward_train, forward_train_ml
from .numeric import bernoulli_entropy, logsumexp

__all__ = [
    "LossBreakdown", "BatchRoutingStats", "cross_entropy", "bernoulli_entropy",
    "hardening_loss", "routing_stats", "stats_from_coeffs", "balance_loss",
    "total_loss", "batch_loss",
]


@dataclass(frozen=True)
class LossBreakdown:
    l_pred: float
    l_harden: float
    l_balance: float
    h: float
    alpha: float
    total: float


@dataclass(frozen=True)
class BatchRoutingStats:
    """f: argmax-dispatch fraction per leaf; p: batch mean coefficient per leaf."""
    f: np.ndarray
    p: np.ndarray


def cross_entropy(logits, label):
    logits = np.asarray(logits)
    label = int(label)
    if not 0 <= label < logits.shape[0]:
        raise DimensionError(
            f"label {label} out of range for {logits.shape[0]} classes")
    return float(logsumexp(logits) - logits[label])


def hardening_loss(traces, batch_mean=True):
    """Sum of node-activation entropies per sample, averaged over the batch."""
    if not traces:
        raise DimensionError("hardening_loss: empty batch")
    total = sum(float(np.sum(bernoulli_entropy(t.node_s))) for t in traces)
    return total / len(traces) if batch_mean else total


def stats_from_coeffs(coeffs):
    """Routing stats from a (batch, leaves) coefficient matrix."""
    coeffs = np.asarray(coeffs)
    if coeffs.ndim != 2 or coeffs.shape[0] == 0:
        raise DimensionError("stats_from_coeffs: need a nonempty (B, L) matrix")
    nl = coeffs.shape[1]
    # np.argmax breaks ties toward the lower index, same as hard routing
    counts = np.bincount(np.argmax(coeffs, axis=1), minlength=nl)
    f = counts / coeffs.shape[0]
    return BatchRoutingStats(f=f, p=coeffs.mean(axis=0))


def routing_stats(traces):
    if not traces:
        raise DimensionError("routing_stats: empty batch")
    return stats_from_coeffs(np.stack([t.coeffs for t in traces]))


def balance_loss(stats, depth):
    """2^d * f . P; differentiable through P only (f is a per-batch constant)."""
    f, p = np.asarray(stats.f), np.asarray(stats.p)
    if f.shape != p.shape:
        raise DimensionError(f"balance_loss: f {f.shape} vs P {p.shape}")
    if f.shape[0] != 2 ** depth:
        raise DimensionError(
            f"balance_loss: {f.shape[0]} leaves but depth {depth} implies {2 ** depth}")
    return float(2 ** depth * np.dot(f, p))


def total_loss(l_pred, l_harden, l_balance, h, alpha):
    vals = (l_pred, l_harden, l_balance, h, alpha)
    if not all(np.isfinite(v) for v in vals):
        raise NumericError(f"non-finite loss inputs: {vals}")
    return LossBreakdown(l_pred=float(l_pred), l_harden=float(l_harden),
                         l_balance=float(l_balance), h=float(h), alpha=float(alpha),
                         total=float(l_pred + h * l_harden + alpha * l_balance))


def batch_loss(model, X, y, h, alpha, batch_mean=True, frozen_f=None):
    """Reference batch loss via per-sample forwards.

    Returns (LossBreakdown, traces, BatchRoutingStats). frozen_f substitutes
    a fixed dispatch fraction into the balance term, which is what gradient
    checking needs: f is treated as a constant of the optimization.
    """
    fwd = forward_train_ml if model.has_master else forward_train
    traces = []
    l_pred = 0.0
    for xi, yi in zip(X, y):
        logits, tr = fwd(model, xi)
        traces.append(tr)
        l_pred += cross_entropy(logits, yi)
    l_pred /= len(traces)
    l_harden = hardening_loss(traces, batch_mean=batch_mean)
    stats = routing_stats(traces)
    if frozen_f is not None:
        stats = BatchRoutingStats(f=np.asarray(frozen_f), p=stats.p)
    l_balance = balance_loss(stats, model.depth)
    return total_loss(l_pred, l_harden, l_balance, h, alpha), traces, stats
