import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moc.ffn import FfnWeights, ffn_backward, ffn_forward
from moc.gradcheck import check_moc, numerical_grad, rel_error
from moc.linalg import silu, silu_grad
from moc.masking import Criterion
from moc.mixture import MocConfig, moc_backward, moc_forward, moc_mask_margin


def dense_mask_moc(x, w, mask_dense):
    """MoC forward/backward with a full binary mask and dense hadamards only."""
    g, u = x @ w.w_gate, x @ w.w_up
    s = silu(g)
    s1 = s * mask_dense
    z1 = s1 * u
    return g, u, s1, z1, z1 @ w.w_down


def dense_mask_backward(x, w, mask_dense, dd):
    g, u, s1, z1, _ = dense_mask_moc(x, w, mask_dense)
    dz = dd @ w.w_down.T
    ds = (u * mask_dense) * dz
    du = s1 * dz
    dg = ds * silu_grad(g)
    return {"w_gate": x.T @ dg, "w_up": x.T @ du, "w_down": z1.T @ dd,
            "x": dg @ w.w_gate.T + du @ w.w_up.T}


def rel(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300)


def test_config_validation():
    with pytest.raises(ValueError):
        MocConfig()
    with pytest.raises(ValueError):
        MocConfig(k=2, group=(1, 2))
    with pytest.raises(ValueError):
        MocConfig(group=(3, 2))
    with pytest.raises(ValueError):
        MocConfig(k=9).validate(8)
    with pytest.raises(ValueError):
        MocConfig(group=(1, 3)).validate(8)
    assert MocConfig(group=(2, 8)).per_row(16) == 4


def test_full_k_matches_dense_forward(rng):
    w = FfnWeights.random(4, 8, rng)
    x = rng.standard_normal((3, 4))
    d_moc, _ = moc_forward(x, w, MocConfig(k=8))
    d_dense, _ = ffn_forward(x, w)
    assert rel(d_moc, d_dense) <= 1e-14


def test_zero_input(rng):
    w = FfnWeights.random(4, 8, rng)
    d, tape = moc_forward(np.zeros((2, 4)), w, MocConfig(k=3))
    assert not d.any()
    assert tape.mask.indices.tolist() == [[0, 1, 2]] * 2


def test_matches_dense_mask_oracle(rng):
    w = FfnWeights.random(4, 8, rng)
    x = rng.standard_normal((3, 4))
    d, tape = moc_forward(x, w, MocConfig(k=2))
    ref = dense_mask_moc(x, w, tape.mask.dense())[-1]
    assert rel(d, ref) <= 1e-12


@given(st.integers(1, 4), st.integers(1, 8), st.integers(1, 16), st.data())
def test_compact_path_equals_dense_oracle(s, d, d_ffn, data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    k = data.draw(st.integers(1, d_ffn))
    w = FfnWeights.random(d, d_ffn, rng)
    x, dd = rng.standard_normal((s, d)), rng.standard_normal((s, d))
    cfg = MocConfig(k=k, gcp=data.draw(st.booleans()))
    out, tape = moc_forward(x, w, cfg)
    mdense = tape.mask.dense()
    np.testing.assert_allclose(out, dense_mask_moc(x, w, mdense)[-1], rtol=1e-12, atol=1e-14)
    grads = moc_backward(tape, dd, w, cfg).as_dict()
    ref = dense_mask_backward(x, w, mdense, dd)
    for name in ref:
        np.testing.assert_allclose(grads[name], ref[name], rtol=1e-12, atol=1e-14)


def test_zero_upstream_gradient(rng):
    w = FfnWeights.random(3, 6, rng)
    cfg = MocConfig(k=2)
    _, tape = moc_forward(rng.standard_normal((2, 3)), w, cfg)
    grads = moc_backward(tape, np.zeros((2, 3)), w, cfg)
    assert all(not g.any() for g in grads.as_dict().values())


@pytest.mark.parametrize("cfg_kw", [{"k": 2}, {"k": 5}, {"group": (1, 3)}, {"group": (2, 4)}])
def test_gcp_bitwise_equal(rng, cfg_kw):
    w = FfnWeights.random(5, 12, rng)
    x, dd = rng.standard_normal((4, 5)), rng.standard_normal((4, 5))
    plain, ckpt = MocConfig(**cfg_kw), MocConfig(**cfg_kw, gcp=True)
    g1 = moc_backward(moc_forward(x, w, plain)[1], dd, w, plain)
    g2 = moc_backward(moc_forward(x, w, ckpt)[1], dd, w, ckpt)
    for name in g1.as_dict():
        assert np.array_equal(g1.as_dict()[name], g2.as_dict()[name])
    k = plain.per_row(12)
    assert g2.recomputed == 2 * 4 * k and g1.recomputed == 0


def test_tape_layout(rng):
    w = FfnWeights.random(4, 8, rng)
    x = rng.standard_normal((3, 4))
    _, tape = moc_forward(x, w, MocConfig(k=2))
    assert set(tape.stored()) == {"X", "G*M", "U*M", "S*M", "Z*M", "M"}
    assert all(a.shape == (3, 2) for n, a in tape.stored().items() if n != "X")
    _, tape = moc_forward(x, w, MocConfig(k=2, gcp=True))
    assert set(tape.stored()) == {"X", "G*M", "U*M", "M"}


def test_frozen_mask_finite_differences(rng):
    w = FfnWeights.random(3, 6, rng)
    x, dd = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    errs = check_moc(x, w, MocConfig(k=2), dd)
    assert max(errs.values()) <= 1e-6, errs


def test_grouped_frozen_mask_finite_differences(rng):
    w = FfnWeights.random(3, 8, rng)
    x, dd = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    errs = check_moc(x, w, MocConfig(group=(2, 4)), dd)
    assert max(errs.values()) <= 1e-6, errs


def test_unfrozen_fd_agrees_when_margin_is_large(rng):
    """With the mask recomputed on every perturbation, FD still matches when h << margin."""
    cfg = MocConfig(k=2)
    h = 1e-6
    checked = 0
    for _ in range(50):
        w = FfnWeights.random(3, 6, rng)
        x, dd = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        margin = moc_mask_margin(x @ w.w_gate, cfg)
        # a perturbation of size h moves any gate entry by at most h * max|x|
        if margin < 1e3 * h * max(1.0, np.max(np.abs(x)), np.max(np.abs(w.w_gate))):
            continue
        _, tape = moc_forward(x, w, cfg)
        analytic = moc_backward(tape, dd, w, cfg)
        wg = w.w_gate.copy()

        def loss():
            return float(np.sum(moc_forward(x, w.replace(w_gate=wg), cfg)[0] * dd))

        assert rel_error(analytic.w_gate, numerical_grad(loss, wg, h)) <= 1e-6
        checked += 1
    assert checked > 10


def test_margin_examples():
    assert moc_mask_margin(np.array([[5.0, 1.0]]), MocConfig(k=1)) == 4.0
    assert moc_mask_margin(np.array([[1.0, 1.0, 0.0]]), MocConfig(k=1)) == 0.0


def test_unselected_channels_have_zero_gradient(rng):
    w = FfnWeights.random(4, 10, rng)
    x, dd = rng.standard_normal((2, 4)), rng.standard_normal((2, 4))
    cfg = MocConfig(k=2)
    _, tape = moc_forward(x, w, cfg)
    grads = moc_backward(tape, dd, w, cfg)
    unused = sorted(set(range(10)) - set(tape.mask.indices.ravel().tolist()))
    assert unused
    assert not grads.w_gate[:, unused].any()
    assert not grads.w_up[:, unused].any()
    assert not grads.w_down[unused, :].any()


def test_degenerate_gradients_match_dense(rng):
    w = FfnWeights.random(5, 7, rng)
    x, dd = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    for cfg in (MocConfig(k=7), MocConfig(group=(7, 7))):
        gm = moc_backward(moc_forward(x, w, cfg)[1], dd, w, cfg).as_dict()
        gd = ffn_backward(ffn_forward(x, w)[1], dd, w).as_dict()
        for name in gd:
            assert rel(gm[name], gd[name]) <= 1e-12


def test_backward_rejects_mismatched_config(rng):
    w = FfnWeights.random(4, 8, rng)
    _, tape = moc_forward(rng.standard_normal((2, 4)), w, MocConfig(k=2))
    with pytest.raises(ValueError):
        moc_backward(tape, np.zeros((2, 4)), w, MocConfig(k=3))
    with pytest.raises(ValueError):
        moc_backward(tape, np.zeros((2, 4)), w, MocConfig(k=2, gcp=True))


def test_post_silu_criterion_runs(rng):
    w = FfnWeights.random(4, 8, rng)
    x = rng.standard_normal((3, 4))
    _, tape = moc_forward(x, w, MocConfig(k=3, criterion=Criterion.POST_SILU))
    assert tape.mask.criterion is Criterion.POST_SILU
