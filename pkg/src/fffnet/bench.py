"""Inference-cost accounting and wall-clock benchmarks.

Neuron and MAC counts come from two independent places and must agree: the
closed-form inference_cost() and live instrumentation counters bumped inside
the per-sample inference path. Wall-clock numbers are reported for context
but are hardware-dependent, so only the counts are load-bearing.

Single-sample timing exists because the conditional-execution win largely
disappears when a dense batched matmul evaluates the whole layer anyway;
batch mode is reported alongside to document that honestly.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DomainError
from .kernels import get_backend
from .model import (EvalCounter, FFFModel, VanillaModel, build_vanilla_ff,
                    forward_inference, forward_inference_ml, inference_cost,
                    training_neuron_count)
from .numeric import make_rng


@dataclass(frozen=True)
class CostReport:
    label: str
    node_neurons: int
    leaf_hidden_neurons: int
    master_hidden_neurons: int
    neurons_per_sample: int
    macs_per_sample: int
    training_neurons: int
    samples: int
    single_mean_us: float
    single_p50_us: float
    single_p99_us: float
    batch_us_per_sample: float

    def line(self):
        return (f"{self.label:<26} neurons {self.neurons_per_sample:>4} "
                f"(n={self.node_neurons} l={self.leaf_hidden_neurons}"
                f" m={self.master_hidden_neurons}) "
                f"macs {self.macs_per_sample:>7} "
                f"single p50 {self.single_p50_us:8.1f}us "
                f"p99 {self.single_p99_us:8.1f}us "
                f"batch {self.batch_us_per_sample:7.2f}us/sample")


def instrumented_counts(model, x_rows):
    """Per-sample counters from actually running the inference path."""
    counter = EvalCounter()
    fwd = forward_inference_ml if getattr(model, "has_master", False) \
        else forward_inference
    if isinstance(model, VanillaModel):
        for x in x_rows:
            model.forward(x)
        n = len(x_rows)
        counter.leaves = n
        counter.leaf_macs = n * (model.width * model.input_dim
                                 + model.class_count * model.width)
    else:
        for x in x_rows:
            fwd(model, x, counter)
    return counter


def verify_counts(model, x_rows):
    """Cross-check instrumentation against the closed form; raises on drift."""
    counter = instrumented_counts(model, x_rows)
    cost = inference_cost(model)
    n = len(x_rows)
    checks = [
        ("node evals", counter.nodes, n * cost.node_neurons),
        ("node macs", counter.node_macs,
         n * cost.node_neurons * model.input_dim),
        ("leaf evals", counter.leaves, n),
        ("leaf+node macs", counter.node_macs + counter.leaf_macs,
         n * cost.macs),
        ("master macs", counter.master_macs, n * cost.master_macs),
    ]
    for what, got, want in checks:
        if got != want:
            raise DomainError(
                f"instrumented {what} = {got}, closed form says {want}")
    return cost


def _percentiles(samples_us):
    arr = np.asarray(samples_us)
    return (float(arr.mean()), float(np.percentile(arr, 50)),
            float(np.percentile(arr, 99)))


def measure(model, x, repetitions=30, warmup=3, backend=None, label=None):
    """Verified counts plus single-sample and batch latency on `x`."""
    if repetitions < 10:
        raise DomainError(f"repetitions must be >= 10, got {repetitions}")
    x = np.ascontiguousarray(x, dtype=model.params.dtype)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise DimensionError(f"bench input {x.shape}, model wants "
                             f"(n, {model.input_dim})")
    be = backend if backend is not None else get_backend()
    cost = verify_counts(model, list(x[:min(64, len(x))]))

    fwd = forward_inference_ml if getattr(model, "has_master", False) \
        else forward_inference
    one = x[0]
    singles = []
    for rep in range(warmup + repetitions):
        t0 = time.perf_counter_ns()
        if isinstance(model, VanillaModel):
            model.forward(one)
        else:
            fwd(model, one)
        dt = time.perf_counter_ns() - t0
        if rep >= warmup:
            singles.append(dt / 1e3)
    mean_us, p50_us, p99_us = _percentiles(singles)

    batch_times = []
    for rep in range(warmup + repetitions):
        t0 = time.perf_counter_ns()
        be.predict(model, x)
        dt = time.perf_counter_ns() - t0
        if rep >= warmup:
            batch_times.append(dt / 1e3)
    batch_us = float(np.percentile(batch_times, 50)) / x.shape[0]

    if label is None:
        if isinstance(model, VanillaModel):
            label = f"plain-w{model.width}"
        else:
            label = (f"tree-w{model.train_width}-l{model.leaf_width}"
                     + (f"-m{model.master_width}" if model.has_master else ""))
    return CostReport(
        label=label,
        node_neurons=cost.node_neurons,
        leaf_hidden_neurons=cost.leaf_hidden_neurons,
        master_hidden_neurons=cost.master_hidden_neurons,
        neurons_per_sample=(cost.node_neurons + cost.leaf_hidden_neurons
                            + cost.master_hidden_neurons),
        macs_per_sample=cost.macs + cost.master_macs,
        training_neurons=training_neuron_count(model),
        samples=int(x.shape[0]),
        single_mean_us=mean_us, single_p50_us=p50_us, single_p99_us=p99_us,
        batch_us_per_sample=batch_us)


def cost_table(pairs, input_dim=784, class_count=10, master_width=0,
               n_samples=256, repetitions=30, seed=0, backend=None,
               include_plain=True):
    """CostReports for (train_width, leaf_width) pairs plus plain controls."""
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=(n_samples, input_dim)).astype(np.float32)
    reports = []
    seen_widths = []
    for width, lw in pairs:
        depth = (width // lw).bit_length() - 1
        model = FFFModel.build(depth, lw, make_rng(seed), input_dim=input_dim,
                               class_count=class_count,
                               master_width=master_width)
        reports.append(measure(model, x, repetitions=repetitions,
                               backend=backend))
        if width not in seen_widths:
            seen_widths.append(width)
    if include_plain:
        for width in seen_widths:
            plain = build_vanilla_ff(input_dim, width, class_count,
                                     make_rng(seed))
            reports.append(measure(plain, x, repetitions=repetitions,
                                   backend=backend))
    return reports


def compare_backends(depth=4, leaf_width=8, input_dim=784, class_count=10,
                     batch=4096, repetitions=30, seed=0):
    """Same model, both kernel builds: step and predict latency."""
    rng = make_rng(seed)
    model = FFFModel.build(depth, leaf_width, make_rng(seed),
                           input_dim=input_dim, class_count=class_count)
    x = rng.uniform(0.0, 1.0, size=(batch, input_dim)).astype(np.float32)
    y = rng.integers(0, class_count, size=batch)
    rows = []
    for name in ("numpy", "numba"):
        try:
            be = get_backend(name)
        except Exception as exc:  # numba genuinely unavailable
            rows.append({"backend": name, "error": str(exc)})
            continue
        grads = model.params.zeros_like()
        step_t, pred_t = [], []
        for rep in range(3 + repetitions):
            t0 = time.perf_counter_ns()
            be.step(model, x, y, grads, h=1.0, alpha=1.0)
            t1 = time.perf_counter_ns()
            be.predict(model, x)
            t2 = time.perf_counter_ns()
            if rep >= 3:
                step_t.append((t1 - t0) / 1e6)
                pred_t.append((t2 - t1) / 1e6)
        rows.append({
            "backend": name,
            "step_ms_p50": float(np.percentile(step_t, 50)),
            "predict_ms_p50": float(np.percentile(pred_t, 50)),
            "batch": batch,
        })
    return rows
