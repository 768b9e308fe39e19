import numpy as np
import pytest

from fffnet.data import batches as make_batches
from fffnet.errors import NumericError
from fffnet.kernels import get_backend
from fffnet.model import FFFModel
from fffnet.numeric import make_rng
from fffnet.optim import (AdamState, Phase, Schedule, adam_step,
                          early_stop_check, run_phase)


def manual_adam(flat, grad, m, v, t, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook bias-corrected update, kept deliberately naive."""
    m = b1 * m + (1 - b1) * grad
    v = b2 * v + (1 - b2) * grad * grad
    mhat = m / (1 - b1 ** t)
    vhat = v / (1 - b2 ** t)
    return flat - lr * mhat / (np.sqrt(vhat) + eps), m, v


class TestAdam:
    def test_matches_textbook_form(self):
        rng = np.random.default_rng(0)
        n = 17
        flat = rng.normal(size=n).astype(np.float32)
        st = AdamState.for_params(flat)
        man = flat.astype(np.float64).copy()
        m = np.zeros(n)
        v = np.zeros(n)
        for t in range(1, 6):
            grad = rng.normal(size=n).astype(np.float32)
            adam_step(flat, grad, st, lr=1e-3)
            man, m, v = manual_adam(man, grad.astype(np.float64), m, v, t,
                                    1e-3)
            np.testing.assert_allclose(flat, man, rtol=2e-5, atol=1e-7)
        assert st.t == 5

    def test_first_step_is_signed_lr(self):
        # with zero state the first update is -lr * sign(g) up to eps
        flat = np.zeros(4, dtype=np.float32)
        st = AdamState.for_params(flat)
        grad = np.array([1.0, -2.0, 0.5, -0.25], dtype=np.float32)
        adam_step(flat, grad, st, lr=0.1)
        np.testing.assert_allclose(flat, -0.1 * np.sign(grad), rtol=1e-4)

    def test_nonfinite_gradient_raises(self):
        flat = np.zeros(3, dtype=np.float32)
        st = AdamState.for_params(flat)
        grad = np.array([1.0, np.nan, 0.0], dtype=np.float32)
        with pytest.raises(NumericError):
            adam_step(flat, grad, st, lr=1e-3)
        grad[1] = np.inf
        with pytest.raises(NumericError):
            adam_step(flat, grad, st, lr=1e-3)
        assert st.t == 0  # rejected before the state advanced
        assert np.all(np.isfinite(flat))

    def test_updates_in_place(self):
        flat = np.ones(5, dtype=np.float32)
        keep = flat
        st = AdamState.for_params(flat)
        adam_step(flat, np.ones(5, dtype=np.float32), st, lr=0.01)
        assert keep is flat
        assert not np.allclose(keep, 1.0)


class TestEarlyStop:
    def test_short_history_never_stops(self):
        assert not early_stop_check([], 50)
        assert not early_stop_check([1.0] * 50, 50)

    def test_stops_when_minimum_is_old(self):
        hist = [1.0] + [2.0] * 50
        assert early_stop_check(hist, 50)
        assert not early_stop_check([1.0] + [2.0] * 49, 50)

    def test_constant_history_counts_first_entry(self):
        # ties resolve to the earliest epoch, so a flat loss curve
        # trips the patience window at length patience + 1
        assert early_stop_check([3.0] * 51, 50)
        assert not early_stop_check([3.0] * 50, 50)

    def test_improvement_resets_window(self):
        hist = [1.0] + [2.0] * 49 + [0.5]
        assert not early_stop_check(hist, 50)

    def test_small_patience(self):
        assert early_stop_check([5.0, 6.0, 7.0], 2)
        assert not early_stop_check([5.0, 6.0, 4.0], 2)


class TestRunPhase:
    def _setup(self, seed=0, batch_size=16):
        m = FFFModel.build(2, 2, make_rng(seed), input_dim=8, class_count=3,
                           master_width=0, dtype=np.float32)
        r = make_rng(seed + 1)
        X = r.uniform(0, 1, (64, 8)).astype(np.float32)
        w = r.normal(size=(8, 3))
        y = np.argmax(X @ w, axis=1).astype(np.int64)
        feed = lambda rr: make_batches(X, y, batch_size, rr)
        return m, get_backend("numpy"), feed, make_rng(seed + 2)

    def test_loss_decreases_on_separable_toy(self):
        m, be, feed, rng = self._setup()
        adam = AdamState.for_params(m.params.flat)
        grads = m.params.zeros_like()
        phase = Phase(epochs=30, lr=1e-2, h=0.0, alpha=0.0, patience=50)
        metrics = run_phase(m, be, feed, phase, 0, adam, grads, rng)
        assert len(metrics) == 30
        assert metrics[-1].loss < metrics[0].loss * 0.7
        assert all(np.isfinite(e.loss) for e in metrics)

    def test_zero_epochs_is_noop(self):
        m, be, feed, rng = self._setup()
        before = m.params.flat.copy()
        adam = AdamState.for_params(m.params.flat)
        phase = Phase(epochs=0, lr=1e-2)
        out = run_phase(m, be, feed, phase, 0, adam, m.params.zeros_like(),
                        rng)
        assert out == []
        np.testing.assert_array_equal(m.params.flat, before)

    def test_early_stop_cuts_run_short(self):
        m, be, _, rng = self._setup()
        r = make_rng(9)
        X = r.uniform(0, 1, (32, 8)).astype(np.float32)
        y = r.integers(0, 3, 32).astype(np.int64)
        feed = lambda _: iter([(X, y)])  # fixed order: epochs bit-identical
        adam = AdamState.for_params(m.params.flat)
        phase = Phase(epochs=200, lr=0.0, h=0.0, alpha=0.0, patience=3)
        metrics = run_phase(m, be, feed, phase, 0, adam,
                            m.params.zeros_like(), rng)
        # lr 0 means the loss never moves, so patience trips immediately
        assert len(metrics) == 4

    def test_dispatch_fractions_sum_to_one(self):
        m, be, feed, rng = self._setup(seed=5)
        adam = AdamState.for_params(m.params.flat)
        phase = Phase(epochs=2, lr=1e-3, h=1.0, alpha=1.0, patience=50)
        metrics = run_phase(m, be, feed, phase, 0, adam,
                            m.params.zeros_like(), rng)
        for em in metrics:
            assert em.dispatch_fraction.shape == (4,)
            np.testing.assert_allclose(em.dispatch_fraction.sum(), 1.0,
                                       atol=1e-12)

    def test_schedule_totals(self):
        sched = Schedule((Phase(epochs=300), Phase(epochs=300)),
                         batch_size=128)
        assert sched.total_epochs == 600
        assert sched.batch_size == 128
