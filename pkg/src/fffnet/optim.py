"""Adam on a flat parameter vector, plus the two-phase schedule runner.

Early stopping watches the training loss: a phase stops once `patience`
epochs have passed since the first strict minimum. The check lives in its
own function so the tie-breaking rule (first minimum wins) stays testable.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def for_params(cls, flat):
        return cls(m=np.zeros_like(flat), v=np.zeros_like(flat))


def adam_step(flat, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on `flat`."""
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in optimizer step")
    state.t += 1
    state.m += (1.0 - beta1) * (grad - state.m)
    state.v += (1.0 - beta2) * (grad * grad - state.v)
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    denom = np.sqrt(state.v / bc2) + eps
    flat -= (lr / bc1) * state.m / denom


@dataclass(frozen=True)
class Phase:
    epochs: int
    lr: float = 1e-3
    h: float = 0.0
    alpha: float = 0.0
    patience: int = 50


@dataclass(frozen=True)
class Schedule:
    phases: tuple
    batch_size: int = 128

    @property
    def total_epochs(self):
        return sum(p.epochs for p in self.phases)


def early_stop_check(history, patience):
    """True once `patience` epochs elapsed since the first strict minimum."""
    if not history or patience <= 0:
        return False
    best_idx = int(np.argmin(history))
    return (len(history) - 1 - best_idx) >= patience


@dataclass
class EpochMetrics:
    epoch: int
    phase: int
    loss: float
    l_pred: float
    l_harden: float
    l_balance: float
    dispatch_fraction: np.ndarray = field(repr=False, default=None)


def run_phase(model, backend, data_batches, phase, phase_index, adam,
              grads, rng, on_epoch=None, harden_batch_mean=True):
    """Train one phase; returns the per-epoch metrics list.

    `data_batches` is a callable (rng) -> iterator of (X, y) minibatches so
    each epoch reshuffles. Dispatch counts are aggregated over the epoch to
    report the epoch-level leaf usage fractions.
    """
    history = []
    metrics = []
    n_leaves = getattr(model, "n_leaves", 0)
    for epoch in range(phase.epochs):
        tot = tot_pred = tot_hard = tot_bal = 0.0
        count = 0
        agg = np.zeros(n_leaves, dtype=np.int64) if n_leaves else None
        for X, y in data_batches(rng):
            stats = backend.step(model, X, y, grads, h=phase.h,
                                 alpha=phase.alpha,
                                 harden_batch_mean=harden_batch_mean)
            adam_step(model.params.flat, grads.flat, adam, phase.lr)
            b = X.shape[0]
            total = (stats.l_pred + phase.h * stats.l_harden
                     + phase.alpha * stats.l_balance)
            tot += total * b
            tot_pred += stats.l_pred * b
            tot_hard += stats.l_harden * b
            tot_bal += stats.l_balance * b
            count += b
            if agg is not None and stats.dispatch is not None:
                agg += stats.dispatch
        em = EpochMetrics(epoch=epoch, phase=phase_index,
                          loss=tot / count, l_pred=tot_pred / count,
                          l_harden=tot_hard / count,
                          l_balance=tot_bal / count,
                          dispatch_fraction=(agg / count if agg is not None
                                             else None))
        metrics.append(em)
        history.append(em.loss)
        if on_epoch is not None:
            on_epoch(em)
        if early_stop_check(history, phase.patience):
            break
    return metrics
