import numpy as np
import pytest

from fffnet.bench import (compare_backends, cost_table, instrumented_counts,
                          measure, verify_counts)
from fffnet.errors import DimensionError, DomainError
from fffnet.model import FFFModel, build_vanilla_ff, inference_cost
from fffnet.numeric import make_rng
from fffnet.trainer import cost_grid


def rows(n, dim, seed=0):
    return list(make_rng(seed).uniform(0, 1, (n, dim)).astype(np.float32))


class TestCounts:
    def test_tree_counts_match_closed_form(self):
        m = FFFModel.build(3, 4, make_rng(0), input_dim=11, class_count=5)
        cost = verify_counts(m, rows(32, 11))
        assert cost.node_neurons == 3
        assert cost.leaf_hidden_neurons == 4

    def test_count_is_input_independent(self):
        # every sample costs the same no matter where it routes
        m = FFFModel.build(4, 2, make_rng(1), input_dim=9, class_count=3)
        a = instrumented_counts(m, rows(17, 9, seed=1))
        b = instrumented_counts(m, rows(17, 9, seed=2))
        assert (a.nodes, a.node_macs, a.leaf_macs) \
            == (b.nodes, b.node_macs, b.leaf_macs)
        assert a.nodes == 17 * 4

    def test_master_counts(self):
        m = FFFModel.build(2, 2, make_rng(2), input_dim=6, class_count=4,
                           master_width=5)
        cost = verify_counts(m, rows(8, 6))
        assert cost.master_hidden_neurons == 5
        assert cost.master_macs == 5 * 6 + 4 * 5

    def test_vanilla_counts(self):
        v = build_vanilla_ff(7, 16, 3, make_rng(0))
        cost = verify_counts(v, rows(12, 7))
        assert cost.node_neurons == 0
        assert cost.leaf_hidden_neurons == 16
        assert cost.macs == 16 * 7 + 3 * 16

    def test_drift_detected(self):
        m = FFFModel.build(2, 2, make_rng(3), input_dim=5, class_count=3)
        good = inference_cost(m)
        import fffnet.bench as bench_mod
        orig = bench_mod.inference_cost
        fake = type(good)(node_neurons=good.node_neurons + 1,
                          leaf_hidden_neurons=good.leaf_hidden_neurons,
                          master_hidden_neurons=good.master_hidden_neurons,
                          macs=good.macs, master_macs=good.master_macs)
        bench_mod.inference_cost = lambda _m: fake
        try:
            with pytest.raises(DomainError, match="node evals"):
                verify_counts(m, rows(4, 5))
        finally:
            bench_mod.inference_cost = orig


class TestStandardGrid:
    def test_reference_cost_points(self):
        # narrowest leaves at both widths: the headline logarithmic costs
        m = FFFModel.build(7, 1, make_rng(0), input_dim=784, class_count=10)
        c = inference_cost(m)
        assert c.node_neurons == 7 and c.leaf_hidden_neurons == 1
        assert c.macs == 7 * 784 + 1 * 784 + 10 * 1
        m = FFFModel.build(1, 8, make_rng(0), input_dim=784, class_count=10)
        c = inference_cost(m)
        assert c.node_neurons + c.leaf_hidden_neurons == 9
        plain = build_vanilla_ff(784, 128, 10, make_rng(0))
        cp = inference_cost(plain)
        assert cp.leaf_hidden_neurons == 128
        assert cp.macs == 128 * 784 + 10 * 128

    def test_macs_decrease_with_narrower_leaves(self):
        pairs = cost_grid()
        assert len(pairs) == 11
        by_width = {}
        for width, lw in pairs:
            depth = (width // lw).bit_length() - 1
            m = FFFModel.build(depth, lw, make_rng(0), input_dim=784,
                               class_count=10)
            by_width.setdefault(width, []).append(inference_cost(m).macs)
        for width, macs in by_width.items():
            assert macs == sorted(macs, reverse=True), (width, macs)
            plain = build_vanilla_ff(784, width, 10, make_rng(0))
            assert macs[-1] < inference_cost(plain).macs


class TestMeasure:
    def test_report_fields(self):
        m = FFFModel.build(2, 4, make_rng(0), input_dim=20, class_count=5)
        x = make_rng(1).uniform(0, 1, (64, 20)).astype(np.float32)
        rep = measure(m, x, repetitions=10)
        assert rep.label == "tree-w16-l4"
        assert rep.neurons_per_sample == 2 + 4
        assert rep.training_neurons == 4 * 4 + 3
        assert rep.samples == 64
        assert rep.single_p50_us > 0
        assert rep.batch_us_per_sample > 0
        assert "macs" in rep.line()

    def test_too_few_repetitions(self):
        m = FFFModel.build(1, 2, make_rng(0), input_dim=4, class_count=3)
        x = np.zeros((8, 4), dtype=np.float32)
        with pytest.raises(DomainError, match="repetitions"):
            measure(m, x, repetitions=9)

    def test_wrong_input_width(self):
        m = FFFModel.build(1, 2, make_rng(0), input_dim=4, class_count=3)
        with pytest.raises(DimensionError):
            measure(m, np.zeros((8, 5), dtype=np.float32), repetitions=10)

    def test_cost_table_includes_plain_controls(self):
        reports = cost_table([(16, 8), (16, 4)], input_dim=30,
                             n_samples=32, repetitions=10)
        labels = [r.line().split()[0] for r in reports]
        assert labels == ["tree-w16-l8", "tree-w16-l4", "plain-w16"]
        # same training capacity family, cheaper inference for deeper trees
        assert reports[1].macs_per_sample < reports[0].macs_per_sample


class TestCompareBackends:
    def test_rows_for_both_kernels(self):
        rows_ = compare_backends(depth=2, leaf_width=2, input_dim=16,
                                 class_count=4, batch=64, repetitions=10)
        assert [r["backend"] for r in rows_] == ["numpy", "numba"]
        for r in rows_:
            if "error" in r:
                continue
            assert r["step_ms_p50"] > 0
            assert r["predict_ms_p50"] > 0
            assert r["batch"] == 64
