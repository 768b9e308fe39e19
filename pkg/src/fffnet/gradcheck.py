"""Finite-difference verification of the analytic gradients.

The analytic side is the per-sample reference backward; the oracle side is a
central finite difference of the reference forward in float64. Each loss
term is checked in isolation and combined. The dispatch fraction f is frozen
at its base-point value during differencing, because the balance term is
defined to carry gradient only through the mean coefficients.

One FD sweep serves all four terms: every perturbation evaluates the full
loss breakdown, and per-term differences are extracted from the same pair of
evaluations.
"""

import time
from dataclasses import dataclass

import numpy as np

from .losses import batch_loss
from .model import FFFModel, backward
from .numeric import make_rng, softmax

TERMS = ("pred", "harden", "balance", "total")


@dataclass(frozen=True)
class SectionCheck:
    section: str
    max_rel: float
    max_abs: float
    ok: bool


@dataclass(frozen=True)
class TermCheck:
    term: str
    sections: tuple
    ok: bool
    worst_rel: float


@dataclass(frozen=True)
class GradcheckResult:
    depth: int
    leaf_width: int
    master_width: int
    terms: tuple
    ok: bool
    elapsed_s: float

    @property
    def worst_rel(self):
        return max(t.worst_rel for t in self.terms)


def _term_values(bd):
    return {"pred": bd.l_pred, "harden": bd.l_harden,
            "balance": bd.l_balance, "total": bd.total}


def analytic_term_grads(model, X, y, h, alpha, batch_mean=True):
    """Reference-backward gradients for each loss term, plus base breakdown."""
    bd, traces, stats = batch_loss(model, X, y, h, alpha, batch_mean=batch_mean)
    b = len(traces)
    norm = 1.0 / b if batch_mean else 1.0
    twod = float(2 ** model.depth)
    f0 = stats.f.copy()
    dc_bal = (twod / b) * f0
    grads = {t: model.params.zeros_like() for t in TERMS}
    zeros = np.zeros(model.class_count, dtype=model.dtype)
    for tr, yi in zip(traces, y):
        dl = softmax(tr.logits)
        dl[int(yi)] -= 1.0
        dl /= b
        backward(model, tr, dl, out=grads["pred"])
        backward(model, tr, zeros, node_entropy_scale=norm, out=grads["harden"])
        backward(model, tr, zeros, dcoeffs=dc_bal, out=grads["balance"])
        backward(model, tr, dl,
                 dcoeffs=alpha * dc_bal if alpha else None,
                 node_entropy_scale=h * norm, out=grads["total"])
    return grads, bd, f0


def fd_term_grads(model, X, y, h, alpha, f0, step=1e-5, batch_mean=True):
    """Central finite differences of every loss term w.r.t. every parameter."""
    flat = model.params.flat
    n = flat.size
    fd = {t: np.empty(n, dtype=np.float64) for t in TERMS}
    for idx in range(n):
        orig = flat[idx]
        flat[idx] = orig + step
        hi, _, _ = batch_loss(model, X, y, h, alpha, batch_mean=batch_mean,
                              frozen_f=f0)
        flat[idx] = orig - step
        lo, _, _ = batch_loss(model, X, y, h, alpha, batch_mean=batch_mean,
                              frozen_f=f0)
        flat[idx] = orig
        hi_v, lo_v = _term_values(hi), _term_values(lo)
        for t in TERMS:
            fd[t][idx] = (hi_v[t] - lo_v[t]) / (2.0 * step)
    return fd


def run_gradcheck(depth, leaf_width, master_width=0, seed=0, input_dim=7,
                  class_count=5, batch=4, h=1.0, alpha=1.0, step=1e-5,
                  rtol=1e-4, atol=1e-8, batch_mean=True):
    """Check one model shape; small dims keep the FD sweep fast."""
    t0 = time.perf_counter()
    rng = make_rng(seed)
    model = FFFModel.build(depth, leaf_width, rng, input_dim=input_dim,
                           class_count=class_count, master_width=master_width,
                           dtype=np.float64)
    X = rng.uniform(0.0, 1.0, size=(batch, input_dim))
    y = rng.integers(0, class_count, size=batch)
    analytic, _, f0 = analytic_term_grads(model, X, y, h, alpha, batch_mean)
    fd = fd_term_grads(model, X, y, h, alpha, f0, step=step,
                       batch_mean=batch_mean)
    sections = model.params.sections
    term_checks = []
    for t in TERMS:
        fd_bundle = type(model.params)(sections, flat=fd[t])
        secs = []
        for name, _ in sections:
            a = analytic[t][name].ravel()
            g = fd_bundle[name].ravel()
            absdiff = np.abs(a - g)
            denom = np.maximum(np.maximum(np.abs(a), np.abs(g)), 1e-10)
            rel = absdiff / denom
            rel_eff = np.where(absdiff <= atol, 0.0, rel)
            secs.append(SectionCheck(section=name,
                                     max_rel=float(rel_eff.max(initial=0.0)),
                                     max_abs=float(absdiff.max(initial=0.0)),
                                     ok=bool(np.all(rel_eff <= rtol))))
        term_checks.append(TermCheck(term=t, sections=tuple(secs),
                                     ok=all(s.ok for s in secs),
                                     worst_rel=max(s.max_rel for s in secs)))
    return GradcheckResult(depth=depth, leaf_width=leaf_width,
                           master_width=master_width, terms=tuple(term_checks),
                           ok=all(t.ok for t in term_checks),
                           elapsed_s=time.perf_counter() - t0)


def grid_gradcheck(depths=(1, 2, 3), leaf_widths=(1, 2, 4), master_width=3,
                   seed=0, **kw):
    """The standard verification grid; master block on so every class is hit."""
    results = []
    for d in depths:
        for lw in leaf_widths:
            results.append(run_gradcheck(d, lw, master_width=master_width,
                                         seed=seed, **kw))
            seed += 1
    return results
