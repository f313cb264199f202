import math

import numpy as np
import pytest

from moc.ffn import FfnGradients, FfnWeights
from moc.mixture import MocConfig
from moc.trainer import (OptimizerState, TrainConfig, activation_stats, adamw_step, lr_at,
                         train_compare)


def grads_like(w, fill=None, arrays=None):
    parts = arrays or [np.full_like(m, fill) for m in w.as_tuple()]
    return FfnGradients(*parts, x=np.zeros(1))


def test_zero_gradient_leaves_weights(rng):
    w = FfnWeights.random(3, 4, rng)
    new, state = adamw_step(w, grads_like(w, 0.0), OptimizerState.zeros_like(w), TrainConfig(), 1e-2)
    for a, b in zip(new.as_tuple(), w.as_tuple()):
        np.testing.assert_array_equal(a, b)
    assert state.step == 1


def test_first_step_is_sign_of_gradient():
    w = FfnWeights(np.array([[1.0]]), np.array([[1.0]]), np.array([[1.0]]))
    cfg = TrainConfig()
    lr = 1e-3
    new, _ = adamw_step(w, grads_like(w, 1.0), OptimizerState.zeros_like(w), cfg, lr)
    # m_hat = 1, v_hat = 1 after bias correction
    expected = 1.0 - lr / (1.0 + cfg.eps)
    assert new.w_gate[0, 0] == pytest.approx(expected, abs=1e-15)
    new, _ = adamw_step(w, grads_like(w, -3.0), OptimizerState.zeros_like(w), cfg, lr)
    assert new.w_up[0, 0] > 1.0


def test_weight_decay_is_decoupled():
    w = FfnWeights(np.array([[2.0]]), np.array([[2.0]]), np.array([[2.0]]))
    cfg = TrainConfig(weight_decay=0.1)
    new, _ = adamw_step(w, grads_like(w, 0.0), OptimizerState.zeros_like(w), cfg, 0.5)
    assert new.w_down[0, 0] == pytest.approx(2.0 - 0.5 * 0.1 * 2.0)


def test_quadratic_loss_decreases_monotonically(rng):
    target = FfnWeights.random(3, 5, rng)
    w = FfnWeights.random(3, 5, rng)
    state = OptimizerState.zeros_like(w)
    cfg = TrainConfig()

    def loss(w):
        return sum(0.5 * np.sum((a - b) ** 2) for a, b in zip(w.as_tuple(), target.as_tuple()))

    losses = [loss(w)]
    for _ in range(10):
        g = grads_like(w, arrays=[a - b for a, b in zip(w.as_tuple(), target.as_tuple())])
        w, state = adamw_step(w, g, state, cfg, 1e-3)
        losses.append(loss(w))
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_schedule_shape():
    cfg = TrainConfig(peak_lr=2e-3, total_steps=100)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(10, cfg) == 2e-3
    assert lr_at(100, cfg) == pytest.approx(0.0, abs=1e-18)
    assert lr_at(5, cfg) == pytest.approx(1e-3)
    assert lr_at(55, cfg) == pytest.approx(1e-3)
    # continuity at the junction
    assert abs(lr_at(9, cfg) - lr_at(10, cfg)) <= 2e-3 / 10 + 1e-15
    with pytest.raises(ValueError):
        lr_at(101, cfg)
    with pytest.raises(ValueError):
        lr_at(-1, cfg)


def test_schedule_min_lr():
    cfg = TrainConfig(peak_lr=1.0, total_steps=50, min_lr=0.1)
    assert lr_at(50, cfg) == pytest.approx(0.1)
    lrs = [lr_at(t, cfg) for t in range(cfg.warmup_steps, 51)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(warmup_frac=0.0)
    with pytest.raises(ValueError):
        TrainConfig(total_steps=0)


SHORT = TrainConfig(total_steps=150, batch=16, seed=3, eval_size=128)


def test_full_k_student_tracks_dense_bitwise():
    res = train_compare(6, 12, SHORT, MocConfig(k=12), task_seed=5)
    assert res.dense_loss == res.moc_loss
    for a, b in zip(res.dense_weights.as_tuple(), res.moc_weights.as_tuple()):
        assert np.array_equal(a, b)


def test_runs_are_deterministic():
    a = train_compare(6, 12, SHORT, MocConfig(k=4), task_seed=1)
    b = train_compare(6, 12, SHORT, MocConfig(k=4), task_seed=1)
    assert a.dense_loss == b.dense_loss and a.moc_loss == b.moc_loss
    c = train_compare(6, 12, SHORT, MocConfig(k=4), task_seed=2)
    assert c.dense_loss != a.dense_loss


def test_csv_columns():
    res = train_compare(4, 8, TrainConfig(total_steps=20, batch=4, eval_size=8), MocConfig(k=2))
    lines = res.to_csv().splitlines()
    assert lines[0] == "step,lr,dense_loss,moc_loss"
    assert len(lines) == 21


def test_activation_stats_small():
    st = activation_stats(np.array([[-1.0, -2.0, 3.0, 4.0]]), bins=4)
    assert st.frac_negative == 0.5
    assert st.counts.sum() == 4
    assert st.cumulative[-1] == 1.0


def test_activation_stats_all_positive(rng):
    g = rng.uniform(0.1, 1.0, size=(10, 10))
    st = activation_stats(g, bins=10)
    assert st.frac_negative == 0.0
    assert st.top30_threshold == np.quantile(g, 0.7)


def test_activation_stats_gaussian_and_threshold(rng):
    g = rng.standard_normal((1000, 1000))
    st = activation_stats(g, bins=100)
    assert abs(st.frac_negative - 0.5) <= 0.01
    assert np.all(np.diff(st.cumulative) >= 0) and st.cumulative[-1] == 1.0
    # mass above the threshold, read from the histogram, is 30% up to one bin
    edges = st.bin_edges
    above = st.counts[edges[:-1] >= st.top30_threshold].sum() / g.size
    one_bin = st.counts.max() / g.size
    assert above >= 0.3 - one_bin


def test_activation_stats_rejects():
    with pytest.raises(ValueError):
        activation_stats(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        activation_stats(np.zeros((2, 3)), bins=1)
