import time

import numpy as np

from fffnet.gradcheck import (TERMS, analytic_term_grads, fd_term_grads,
                              grid_gradcheck, run_gradcheck)
from fffnet.model import FFFModel
from fffnet.numeric import make_rng


def test_single_config_passes():
    res = run_gradcheck(depth=2, leaf_width=3, master_width=4, seed=1)
    assert res.ok
    by_term = {t.term: t for t in res.terms}
    assert set(by_term) == set(TERMS)
    for tc in by_term.values():
        assert tc.ok
        assert tc.worst_rel <= 1e-4
        # every section must have been compared, including the scalar gate
        names = {s.section for s in tc.sections}
        assert "kappa" in names and "m_w1" in names


def test_detects_a_broken_gradient():
    # sabotage the analytic side and make sure the oracle disagrees
    m = FFFModel.build(2, 2, make_rng(0), input_dim=5, class_count=3,
                       master_width=0, dtype=np.float64)
    r = make_rng(1)
    X = r.uniform(0, 1, (4, 5))
    y = r.integers(0, 3, 4).astype(np.int64)
    ana, _, f0 = analytic_term_grads(m, X, y, h=1.0, alpha=1.0)
    fd = fd_term_grads(m, X, y, h=1.0, alpha=1.0, f0=f0, step=1e-5)
    good = ana["total"].flat.copy()
    assert np.abs(good - fd["total"]).max() < 1e-6
    bad = good + 1e-2
    assert np.abs(bad - fd["total"]).max() > 1e-3


def test_balance_term_gradient_isolated():
    # the balance column of the FD sweep must match the closed-form
    # coefficient seeding alone, with f frozen at the base point
    m = FFFModel.build(3, 2, make_rng(5), input_dim=6, class_count=4,
                       master_width=0, dtype=np.float64)
    r = make_rng(6)
    X = r.uniform(0, 1, (8, 6))
    y = r.integers(0, 4, 8).astype(np.int64)
    ana, _, f0 = analytic_term_grads(m, X, y, h=0.0, alpha=1.0)
    fd = fd_term_grads(m, X, y, h=0.0, alpha=1.0, f0=f0, step=1e-5)
    fd_bundle = type(m.params)(m.params.sections, flat=fd["balance"])
    for sec in ("node_w", "node_b"):
        np.testing.assert_allclose(ana["balance"][sec], fd_bundle[sec],
                                   atol=1e-7)
    # leaf parameters never influence routing probabilities
    assert np.abs(ana["balance"]["leaf_w1"]).max() == 0.0
    assert np.abs(fd_bundle["leaf_w1"]).max() < 1e-8


def test_grid_all_shapes_ok_and_fast():
    t0 = time.perf_counter()
    results = grid_gradcheck()
    elapsed = time.perf_counter() - t0
    assert len(results) == 9
    assert all(r.ok for r in results)
    assert elapsed < 60.0
    shapes = {(r.depth, r.leaf_width) for r in results}
    assert shapes == {(d, lw) for d in (1, 2, 3) for lw in (1, 2, 4)}


def test_sum_mode_hardening_also_checks():
    res = run_gradcheck(depth=2, leaf_width=2, seed=3, batch_mean=False)
    assert res.ok
