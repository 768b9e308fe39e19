"""Command-line entry point: fetch, train, eval, bench, sweep, gradcheck.

Exit codes: 0 success, 1 a requested check failed, 2 usage or config
problem, 3 data or checkpoint problem, 4 numeric failure. A JSON config
file can prefill any long flag of the subcommand (keys use underscores);
flags given explicitly on the command line win.
"""

import argparse
import json
import sys

import numpy as np

from . import bench as bench_mod
from . import data, persistence, trainer
from .errors import (CheckpointError, ConfigError, DataError, DimensionError,
                     DomainError, NumericError)
from .gradcheck import grid_gradcheck, run_gradcheck
from .kernels import available_backends, get_backend
from .numeric import make_rng

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _apply_config_file(args, parser_defaults):
    """Fill unset flags from --config JSON; explicit flags keep precedence."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        try:
            overrides = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(overrides) - set(parser_defaults)
    if unknown:
        raise ConfigError(
            f"config keys {sorted(unknown)} are not flags of this command; "
            f"valid keys: {sorted(parser_defaults)}")
    for key, value in overrides.items():
        if getattr(args, key) is None:  # not given on the command line
            setattr(args, key, value)
    for key, default in parser_defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, default)
    return args


def _defaults(args, defaults):
    for key, value in defaults.items():
        if getattr(args, key) is None:
            setattr(args, key, value)


# ---- subcommands ----


def cmd_fetch(args):
    names = list(data.MANIFEST) if args.dataset == "all" else [args.dataset]
    for name in names:
        path = data.fetch(name, root=args.cache_dir, force=args.force)
        print(f"{name}: verified at {path}")
    return EXIT_OK


TRAIN_DEFAULTS = {
    "dataset": "mnist", "variant": "fff_balanced", "width": 16,
    "leaf_width": 8, "master_width": 0, "seed": 0, "scale": "full",
    "batch_size": 128, "backend": None, "out": None, "results_dir": None,
    "cache_dir": None, "quiet": False, "config": None,
}


def _train_config(args):
    variant = trainer.canon_variant(args.variant)
    mw = args.master_width
    if variant == "master" and not mw:
        mw = 8
    return trainer.ExperimentConfig(
        dataset=args.dataset, variant=variant, train_width=args.width,
        leaf_width=0 if variant == "vanilla" else args.leaf_width,
        master_width=mw if variant == "master" else 0,
        seed=args.seed, scale=args.scale, batch_size=args.batch_size)


def cmd_train(args):
    _apply_config_file(args, TRAIN_DEFAULTS)
    _defaults(args, TRAIN_DEFAULTS)
    cfg = _train_config(args)
    be = get_backend(args.backend) if args.backend else get_backend()
    ds = data.load(cfg.dataset, root=args.cache_dir)

    def on_epoch(rec):
        if not args.quiet:
            print(json.dumps({k: v for k, v in rec.items() if k != "f_hist"}),
                  flush=True)

    report, model = trainer.run_single(cfg, ds=ds, backend=be,
                                       on_epoch=on_epoch)
    print(f"best train {report.best_train_acc:.2f} "
          f"best test {report.best_test_acc:.2f} "
          f"epochs {sum(report.epochs_run)} "
          f"elapsed {report.elapsed_s:.0f}s backend {report.backend}")
    if args.results_dir:
        path = trainer.save_report(report, args.results_dir)
        print(f"report: {path}")
    if args.out:
        meta = {"dataset": cfg.dataset, "variant": cfg.variant,
                "seed": cfg.seed, "scale": cfg.scale,
                "best_test_acc": report.best_test_acc}
        persistence.save(model, args.out, meta=meta)
        print(f"checkpoint: {args.out}")
    return EXIT_OK


def cmd_eval(args):
    model, meta, _ = persistence.load(args.checkpoint)
    dataset = args.dataset or meta.get("dataset")
    if not dataset:
        raise ConfigError("checkpoint lacks a dataset tag; pass --dataset")
    ds = data.load(dataset, root=args.cache_dir)
    be = get_backend(args.backend) if args.backend else get_backend()
    splits = ("train", "test") if args.split == "both" else (args.split,)
    for split in splits:
        x, y = (ds.x_train, ds.y_train) if split == "train" \
            else (ds.x_test, ds.y_test)
        acc = trainer.evaluate(model, x, y, be, soft=args.soft)
        mode = "soft" if args.soft else "hard"
        print(f"{dataset} {split} accuracy ({mode} routing): {acc:.2f}")
    return EXIT_OK


def cmd_bench(args):
    be = get_backend(args.backend) if args.backend else get_backend()
    if args.compare_backends:
        for row in bench_mod.compare_backends(repetitions=args.repetitions):
            if "error" in row:
                print(f"{row['backend']:<6} unavailable: {row['error']}")
            else:
                print(f"{row['backend']:<6} batch={row['batch']} "
                      f"step p50 {row['step_ms_p50']:7.2f}ms "
                      f"predict p50 {row['predict_ms_p50']:7.2f}ms")
        return EXIT_OK
    if args.checkpoint:
        model, meta, _ = persistence.load(args.checkpoint)
        rng = make_rng(0)
        x = rng.uniform(0, 1, (256, model.input_dim)).astype(np.float32)
        print(bench_mod.measure(model, x, repetitions=args.repetitions,
                                backend=be).line())
        return EXIT_OK
    # default: the standard cost grid, counts verified by instrumentation
    reports = bench_mod.cost_table(trainer.cost_grid(),
                                   repetitions=args.repetitions, backend=be)
    for rep in reports:
        print(rep.line())
    return EXIT_OK


SWEEP_DEFAULTS = {
    "table": None, "suite": None, "runs": None, "scale": "full",
    "results_dir": "results", "jobs": 1, "list": False, "cache_dir": None,
    "config": None,
}


def _sweep_configs(args):
    if (args.table is None) == (args.suite is None):
        raise ConfigError("pick exactly one of --table or --suite")
    if args.suite == "acceptance":
        return trainer.acceptance_suite()
    if args.suite == "smoke":
        return trainer.smoke_suite()
    runs = args.runs
    if args.table == 1:
        return trainer.table1_grid(runs=runs or 10, scale=args.scale)
    if args.table == 2:
        return trainer.table2_grid(runs=runs or 10, scale=args.scale)
    return trainer.table3_grid(runs=runs or 5, scale=args.scale)


def cmd_sweep(args):
    _apply_config_file(args, SWEEP_DEFAULTS)
    _defaults(args, SWEEP_DEFAULTS)
    configs = _sweep_configs(args)
    if args.list:
        for cfg in configs:
            print(f"{cfg.label()} seed={cfg.seed} scale={cfg.scale}")
        print(f"total: {len(configs)} runs")
        return EXIT_OK
    reports = trainer.run_sweep(configs, args.results_dir, jobs=args.jobs,
                                log=lambda m: print(m, flush=True))
    print()
    for row in trainer.summarize(reports):
        print(row.line())
    missing = len(configs) - len(reports)
    if missing:
        print(f"{missing} runs missing or failed", file=sys.stderr)
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_gradcheck(args):
    if args.depth is not None or args.leaf_width is not None:
        if args.depth is None or args.leaf_width is None:
            raise ConfigError("--depth and --leaf-width go together")
        results = [run_gradcheck(args.depth, args.leaf_width,
                                 master_width=args.master_width or 0)]
    else:
        results = grid_gradcheck(master_width=args.master_width or 3)
    failed = 0
    for res in results:
        status = "ok" if res.ok else "FAIL"
        print(f"depth={res.depth} leaf_width={res.leaf_width} "
              f"master={res.master_width}: {status} "
              f"worst_rel={res.worst_rel:.2e} ({res.elapsed_s:.2f}s)")
        for term in res.terms:
            if not term.ok:
                print(f"  term {term.term}: worst_rel={term.worst_rel:.2e}")
        failed += 0 if res.ok else 1
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_backends(_args):
    for name in available_backends():
        print(name)
    print(f"default: {get_backend().name}")
    return EXIT_OK


# ---- parser ----


def _build_parser():
    p = argparse.ArgumentParser(
        prog="fffnet",
        description="Train and benchmark conditionally-executed "
                    "tree-routed feedforward nets.")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fetch", help="download and verify a dataset")
    f.add_argument("dataset", choices=[*data.MANIFEST, "all"])
    f.add_argument("--cache-dir", default=None)
    f.add_argument("--force", action="store_true")
    f.set_defaults(func=cmd_fetch)

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--dataset", choices=list(data.MANIFEST), default=None)
    t.add_argument("--variant", default=None,
                   choices=sorted(set(trainer.VARIANTS)
                                  | set(trainer.VARIANT_ALIASES)))
    t.add_argument("--width", type=int, default=None,
                   help="training width w (total leaf hidden units)")
    t.add_argument("--leaf-width", type=int, default=None)
    t.add_argument("--master-width", type=int, default=None)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--scale", choices=list(trainer.SCALES), default=None,
                   help="full reproduces the published schedule; "
                        "desk is a shortened variant for quick runs")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--backend", choices=["numba", "numpy"], default=None)
    t.add_argument("--out", default=None, help="write a checkpoint here")
    t.add_argument("--results-dir", default=None)
    t.add_argument("--cache-dir", default=None)
    t.add_argument("--quiet", action="store_true", default=None)
    t.add_argument("--config", default=None,
                   help="JSON file prefilling any of this command's flags")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", choices=list(data.MANIFEST), default=None)
    e.add_argument("--split", choices=["train", "test", "both"],
                   default="test")
    e.add_argument("--soft", action="store_true",
                   help="evaluate the soft mixture instead of hard routing")
    e.add_argument("--backend", choices=["numba", "numpy"], default=None)
    e.add_argument("--cache-dir", default=None)
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="cost counts and latency")
    b.add_argument("--checkpoint", default=None)
    b.add_argument("--grid", action="store_true",
                   help="standard width/leaf-width cost grid (default)")
    b.add_argument("--compare-backends", action="store_true")
    b.add_argument("--repetitions", type=int, default=30)
    b.add_argument("--backend", choices=["numba", "numpy"], default=None)
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("sweep", help="multi-run grids with cached results")
    s.add_argument("--table", type=int, choices=[1, 2, 3], default=None)
    s.add_argument("--suite", choices=["acceptance", "smoke"], default=None)
    s.add_argument("--runs", type=int, default=None)
    s.add_argument("--scale", choices=list(trainer.SCALES), default=None)
    s.add_argument("--results-dir", default=None)
    s.add_argument("--jobs", type=int, default=None)
    s.add_argument("--list", action="store_true", default=None,
                   help="print the grid without running it")
    s.add_argument("--cache-dir", default=None)
    s.add_argument("--config", default=None)
    s.set_defaults(func=cmd_sweep)

    g = sub.add_parser("gradcheck",
                       help="finite-difference gradient verification")
    g.add_argument("--depth", type=int, default=None)
    g.add_argument("--leaf-width", type=int, default=None)
    g.add_argument("--master-width", type=int, default=None)
    g.set_defaults(func=cmd_gradcheck)

    k = sub.add_parser("backends", help="list compute backends")
    k.set_defaults(func=cmd_backends)
    return p


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DomainError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
