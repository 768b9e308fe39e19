"""Experiment configs, single runs, and resumable sweeps.

A run is identified by its config hash plus seed; finished runs are written
to a results directory as gzipped JSON and reloaded instead of recomputed,
so sweeps survive interruption and tests can consume precomputed results.

Variants:
  vanilla  - plain two-layer net of the stated width, same schedule
  baseline - tree model, usage-balance weight forced to zero in both phases
  balanced - tree model, usage-balance weight 1 in phase one
  master   - balanced plus the always-active side block and learned mix
"""

import gzip
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import data
from .errors import ConfigError
from .kernels import get_backend
from .model import FFFModel, build_vanilla_ff
from .numeric import make_rng, sigmoid
from .optim import AdamState, Phase, Schedule, run_phase

VARIANTS = ("vanilla", "baseline", "balanced", "master")
# long-form aliases accepted anywhere a variant is named
VARIANT_ALIASES = {
    "vanilla_ff": "vanilla",
    "fff_baseline": "baseline",
    "fff_balanced": "balanced",
    "fff_master_balanced": "master",
}
SCALES = ("full", "desk", "smoke")


def canon_variant(name):
    name = VARIANT_ALIASES.get(name, name)
    if name not in VARIANTS:
        raise ConfigError(
            f"unknown variant {name!r}; expected one of {VARIANTS} "
            f"or {tuple(VARIANT_ALIASES)}")
    return name


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str
    variant: str
    train_width: int
    leaf_width: int = 0
    master_width: int = 0
    seed: int = 0
    scale: str = "full"
    batch_size: int = 128
    harden_batch_mean: bool = True

    def __post_init__(self):
        object.__setattr__(self, "variant", canon_variant(self.variant))
        if self.scale not in SCALES:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if self.train_width < 1:
            raise ConfigError("train_width must be >= 1")
        if self.variant == "vanilla":
            if self.leaf_width or self.master_width:
                raise ConfigError("vanilla takes no leaf or master width")
            return
        if self.leaf_width < 1:
            raise ConfigError("tree variants need leaf_width >= 1")
        ratio, rem = divmod(self.train_width, self.leaf_width)
        if rem or ratio < 2 or ratio & (ratio - 1):
            raise ConfigError(
                f"train_width/leaf_width must be a power of two >= 2, "
                f"got {self.train_width}/{self.leaf_width}")
        if self.variant == "master":
            if self.master_width < 1:
                raise ConfigError("master variant needs master_width >= 1")
        elif self.master_width:
            raise ConfigError(f"{self.variant} takes no master_width")

    @property
    def depth(self):
        if self.variant == "vanilla":
            return 0
        return (self.train_width // self.leaf_width).bit_length() - 1

    def label(self):
        bits = [self.dataset, self.variant, f"w{self.train_width}"]
        if self.variant != "vanilla":
            bits.append(f"l{self.leaf_width}")
        if self.master_width:
            bits.append(f"m{self.master_width}")
        return "-".join(bits)


def phase_epochs(variant, scale):
    if scale == "smoke":
        return (15, 5)
    if variant == "master":
        return (200, 100) if scale == "full" else (70, 30)
    return (300, 300) if scale == "full" else (100, 50)


def default_schedule(cfg):
    """Two phases: route-shaping with balancing, then pure hardening."""
    e1, e2 = phase_epochs(cfg.variant, cfg.scale)
    alpha1 = 1.0 if cfg.variant in ("balanced", "master") else 0.0
    return Schedule(phases=(
        Phase(epochs=e1, lr=1e-3, h=1.0, alpha=alpha1, patience=50),
        Phase(epochs=e2, lr=1e-3, h=3.0, alpha=0.0, patience=50),
    ), batch_size=cfg.batch_size)


def build_model(cfg, input_dim, class_count, rng, dtype=np.float32):
    if cfg.variant == "vanilla":
        return build_vanilla_ff(input_dim, cfg.train_width, class_count,
                                rng, dtype=dtype)
    mw = cfg.master_width if cfg.variant == "master" else 0
    return FFFModel.build(cfg.depth, cfg.leaf_width, rng,
                          input_dim=input_dim, class_count=class_count,
                          master_width=mw, dtype=dtype)


def soft_logits(model, x):
    """Batched soft-mixture logits; evaluation-only mirror of the train path."""
    p = model.params
    if not hasattr(model, "depth"):  # vanilla
        h = np.maximum(x @ p["w1"].T + p["b1"], 0.0)
        return h @ p["w2"].T + p["b2"]
    h = np.maximum(x @ p["leaf_w1"].T + p["leaf_b1"], 0.0)
    zn = x @ p["node_w"].T + p["node_b"]
    s = sigmoid(zn)
    b, nn_ = zn.shape
    masses = np.empty((b, nn_ + model.n_leaves), dtype=x.dtype)
    masses[:, 0] = 1.0
    for j in range(nn_):
        masses[:, 2 * j + 1] = masses[:, j] * (1.0 - s[:, j])
        masses[:, 2 * j + 2] = masses[:, j] * s[:, j]
    c = masses[:, nn_:]
    lw = model.leaf_width
    ac = h * np.repeat(c, lw, axis=1)
    logits = ac @ p["leaf_w2"].T + c @ p["leaf_b2"]
    if model.has_master:
        hm = np.maximum(x @ p["m_w1"].T + p["m_b1"], 0.0)
        ml = hm @ p["m_w2"].T + p["m_b2"]
        k = sigmoid(p["kappa"][0])
        logits = k * logits + (1.0 - k) * ml
    return logits


def evaluate(model, x, y, backend, chunk=16384, soft=False):
    """Accuracy in percent; hard routing by default, soft mixture on request."""
    correct = 0
    for s in range(0, x.shape[0], chunk):
        xc = x[s:s + chunk]
        if soft:
            preds = np.argmax(soft_logits(model, xc), axis=1)
        else:
            preds = backend.predict(model, xc)
        correct += int((preds == y[s:s + chunk]).sum())
    return 100.0 * correct / x.shape[0]


@dataclass
class RunReport:
    config: ExperimentConfig
    records: list
    epochs_run: list
    final_f: list
    backend: str
    elapsed_s: float

    @property
    def best_test_acc(self):
        return max(r["test_acc"] for r in self.records)

    @property
    def best_train_acc(self):
        return max(r["train_acc"] for r in self.records)

    @property
    def final_max_f(self):
        return max(self.final_f) if self.final_f else None

    def to_dict(self):
        return {"config": asdict(self.config), "records": self.records,
                "epochs_run": self.epochs_run, "final_f": self.final_f,
                "backend": self.backend, "elapsed_s": self.elapsed_s}

    @classmethod
    def from_dict(cls, d):
        return cls(config=ExperimentConfig(**d["config"]),
                   records=d["records"], epochs_run=d["epochs_run"],
                   final_f=d["final_f"], backend=d["backend"],
                   elapsed_s=d["elapsed_s"])


def run_single(cfg, ds=None, backend=None, on_epoch=None):
    """Train one configuration end to end and report per-epoch metrics."""
    t0 = time.perf_counter()
    be = backend if backend is not None else get_backend()
    if ds is None:
        ds = data.load(cfg.dataset)
    rng = make_rng(cfg.seed)
    model = build_model(cfg, ds.input_dim, ds.class_count, rng)
    sched = default_schedule(cfg)
    adam = AdamState.for_params(model.params.flat)
    grads = model.params.zeros_like()
    records = []
    epochs_run = []
    last_f = None

    def batch_fn(r):
        return data.batches(ds.x_train, ds.y_train, cfg.batch_size, r)

    for pi, phase in enumerate(sched.phases):
        def hook(em, pi=pi):
            nonlocal last_f
            rec = {
                "epoch": len(records), "phase": pi,
                "loss": em.loss, "l_pred": em.l_pred,
                "l_harden": em.l_harden, "l_balance": em.l_balance,
                "train_acc": evaluate(model, ds.x_train, ds.y_train, be),
                "test_acc": evaluate(model, ds.x_test, ds.y_test, be),
            }
            if em.dispatch_fraction is not None:
                last_f = em.dispatch_fraction
                rec["f_hist"] = [float(v) for v in em.dispatch_fraction]
                rec["max_f"] = float(em.dispatch_fraction.max())
            if getattr(model, "has_master", False):
                rec["k"] = float(sigmoid(model.params["kappa"][0]))
            records.append(rec)
            if on_epoch is not None:
                on_epoch(rec)

        metrics = run_phase(model, be, batch_fn, phase, pi, adam, grads, rng,
                            on_epoch=hook,
                            harden_batch_mean=cfg.harden_batch_mean)
        epochs_run.append(len(metrics))

    return RunReport(
        config=cfg, records=records, epochs_run=epochs_run,
        final_f=[float(v) for v in last_f] if last_f is not None else [],
        backend=be.name, elapsed_s=time.perf_counter() - t0), model


# ---- results store ----


def config_key(cfg):
    """Hash of everything that defines the run except the seed."""
    d = asdict(cfg)
    d.pop("seed")
    blob = json.dumps(d, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:10]


def run_filename(cfg):
    return f"{cfg.label()}-{cfg.scale}-{config_key(cfg)}-s{cfg.seed}.json.gz"


def save_report(report, results_dir):
    os.makedirs(results_dir, exist_ok=True)
    path = os.path.join(results_dir, run_filename(report.config))
    tmp = path + ".tmp"
    with gzip.open(tmp, "wt") as fh:
        json.dump(report.to_dict(), fh)
    os.replace(tmp, path)
    return path


def load_report(path):
    with gzip.open(path, "rt") as fh:
        return RunReport.from_dict(json.load(fh))


_DS_CACHE = {}


def _dataset(name):
    if name not in _DS_CACHE:
        _DS_CACHE[name] = data.load(name)
    return _DS_CACHE[name]


def _run_and_save(cfg, results_dir):
    """One sweep unit; failures are recorded, not raised, so sweeps finish."""
    path = os.path.join(results_dir, run_filename(cfg))
    if os.path.exists(path):
        return path, None
    try:
        report, _ = run_single(cfg, ds=_dataset(cfg.dataset))
    except Exception as exc:  # noqa: BLE001 - record and move on
        marker = path + ".failed"
        with open(marker, "w") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        return marker, exc
    save_report(report, results_dir)
    return path, None


def _sweep_worker(args):
    path, exc = _run_and_save(*args)
    return path, repr(exc) if exc else None


def run_sweep(configs, results_dir, jobs=1, log=None):
    """Run every config not already present in results_dir; return reports.

    Completed runs are skipped by filename, which is what makes sweeps
    resumable. Failed runs leave a .failed marker and do not abort the rest;
    the returned list holds reports for the runs that finished.
    """
    os.makedirs(results_dir, exist_ok=True)
    pending = [c for c in configs
               if not os.path.exists(os.path.join(results_dir,
                                                  run_filename(c)))]
    if log:
        log(f"{len(configs)} runs requested, {len(pending)} to compute, "
            f"{len(configs) - len(pending)} cached")
    if pending and jobs > 1:
        import multiprocessing as mp
        os.environ.setdefault("OMP_NUM_THREADS", "1")
        os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
        ctx = mp.get_context("spawn")
        with ctx.Pool(processes=jobs) as pool:
            args = [(c, results_dir) for c in pending]
            for i, (path, err) in enumerate(
                    pool.imap_unordered(_sweep_worker, args)):
                if log:
                    note = f" FAILED: {err}" if err else ""
                    log(f"[{i + 1}/{len(pending)}] "
                        f"{os.path.basename(path)}{note}")
    elif pending:
        for i, cfg in enumerate(pending):
            path, exc = _run_and_save(cfg, results_dir)
            if log:
                if exc:
                    log(f"[{i + 1}/{len(pending)}] {cfg.label()}-s{cfg.seed} "
                        f"FAILED: {exc!r}")
                else:
                    rep = load_report(path)
                    log(f"[{i + 1}/{len(pending)}] {cfg.label()}-s{cfg.seed} "
                        f"best test {rep.best_test_acc:.2f} "
                        f"({rep.elapsed_s:.0f}s)")
    reports = []
    for c in configs:
        path = os.path.join(results_dir, run_filename(c))
        if os.path.exists(path):
            reports.append(load_report(path))
    return reports


# ---- grouping and summaries ----


def group_reports(reports):
    groups = {}
    for rep in reports:
        groups.setdefault(config_key(rep.config), []).append(rep)
    return groups


@dataclass(frozen=True)
class GroupSummary:
    label: str
    runs: int
    best_test: float
    worst_test: float
    best_train: float
    worst_train: float

    @property
    def test_spread(self):
        return self.best_test - self.worst_test

    @property
    def train_spread(self):
        return self.best_train - self.worst_train

    def line(self):
        return (f"{self.label:<40} runs={self.runs:<3} "
                f"train {self.best_train:5.1f} -{self.train_spread:4.1f}  "
                f"test {self.best_test:5.1f} -{self.test_spread:4.1f}")


def summarize(reports):
    out = []
    for key, group in sorted(group_reports(reports).items(),
                             key=lambda kv: kv[1][0].config.label()):
        tests = [r.best_test_acc for r in group]
        trains = [r.best_train_acc for r in group]
        out.append(GroupSummary(label=group[0].config.label(),
                                runs=len(group),
                                best_test=max(tests), worst_test=min(tests),
                                best_train=max(trains),
                                worst_train=min(trains)))
    return out


# ---- standard grids ----

LEAF_WIDTHS_16 = (8, 4, 2, 1)
LEAF_WIDTHS_128 = (64, 32, 16, 8, 4, 2, 1)


def _seeds(cfg, runs, base_seed=0):
    return [replace(cfg, seed=base_seed + s) for s in range(runs)]


def table1_grid(runs=10, scale="full"):
    """Width-16 trees on both datasets, plus the width-16 dense control."""
    cfgs = []
    for dsname in ("mnist", "fashion_mnist"):
        cfgs += _seeds(ExperimentConfig(dsname, "vanilla", 16, scale=scale),
                       runs)
        for lw in LEAF_WIDTHS_16:
            for variant in ("baseline", "balanced"):
                cfgs += _seeds(ExperimentConfig(dsname, variant, 16,
                                                leaf_width=lw, scale=scale),
                               runs)
    return cfgs


def table2_grid(runs=10, scale="full"):
    """Width sweep on the harder dataset at both scales."""
    cfgs = []
    for width, widths in ((16, LEAF_WIDTHS_16), (128, LEAF_WIDTHS_128)):
        for lw in widths:
            for variant in ("baseline", "balanced"):
                cfgs += _seeds(ExperimentConfig("fashion_mnist", variant,
                                                width, leaf_width=lw,
                                                scale=scale), runs)
    return cfgs


def table3_grid(runs=5, scale="full", master_width=8):
    """Master-block runs against plain balanced runs."""
    cfgs = []
    for width in (16, 128):
        for lw in LEAF_WIDTHS_16:
            cfgs += _seeds(ExperimentConfig("mnist", "master", width,
                                            leaf_width=lw,
                                            master_width=master_width,
                                            scale=scale), runs)
            cfgs += _seeds(ExperimentConfig("mnist", "balanced", width,
                                            leaf_width=lw, scale=scale), runs)
    return cfgs


def cost_grid():
    """(train_width, leaf_width)-pairs whose inference cost gets reported."""
    pairs = [(16, lw) for lw in LEAF_WIDTHS_16]
    pairs += [(128, lw) for lw in LEAF_WIDTHS_128]
    return pairs


def acceptance_suite():
    """Exactly the runs the result-quality checks consume."""
    E = ExperimentConfig
    cfgs = []
    cfgs += _seeds(E("mnist", "vanilla", 16), 5)
    cfgs += _seeds(E("mnist", "balanced", 16, leaf_width=8), 10)
    cfgs += _seeds(E("mnist", "baseline", 16, leaf_width=8), 5)
    cfgs += _seeds(E("mnist", "master", 16, leaf_width=8, master_width=8), 5)
    cfgs += _seeds(E("mnist", "baseline", 16, leaf_width=1), 10)
    cfgs += _seeds(E("mnist", "balanced", 16, leaf_width=1), 10)
    for lw in LEAF_WIDTHS_16:
        for variant in ("baseline", "balanced"):
            cfgs += _seeds(E("fashion_mnist", variant, 16, leaf_width=lw), 10)
    return cfgs


def smoke_suite():
    """Wide grid, few epochs: exercises numerics, not accuracy."""
    cfgs = []
    for lw in LEAF_WIDTHS_128:
        for variant in ("baseline", "balanced"):
            cfgs.append(ExperimentConfig("fashion_mnist", variant, 128,
                                         leaf_width=lw, scale="smoke"))
    return cfgs
