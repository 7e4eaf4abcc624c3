import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rvrae.beta_net import (LstmState, beta_from_characteristics, init_beta_params, lstm_step)
from rvrae.errors import AlignmentError
from rvrae.numerics import DimensionError, ParamStore, Rng, Tensor, grad_check, tsum


def beta_store(C=3, H=2, K=2, seed=0, zero=False):
    store = ParamStore()
    init_beta_params(store, Rng(seed), C, H, K)
    if zero:
        for v in store.values.values():
            v.fill(0.0)
    return store


def history(T=5, M=4, C=3, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, size=(T, M, C))


def test_projection_only_when_hidden_differs():
    assert "beta.w_proj" not in beta_store(H=2, K=2)
    s = beta_store(H=5, K=2)
    assert s["beta.w_proj"].shape == (2, 5)


def test_zero_params_halve_cell_state():
    p = beta_store(zero=True).constants()
    c_prev = np.array([[0.8, -0.4]])
    state = LstmState(Tensor(np.concatenate([[[0.0, 0.0]], c_prev], axis=1)))
    nxt = lstm_step(Tensor([[1.0, 2.0, 3.0]]), state, p)
    np.testing.assert_allclose(nxt.c.value, 0.5 * c_prev, rtol=0, atol=1e-15)
    np.testing.assert_allclose(nxt.h.value, 0.5 * np.tanh(0.5 * c_prev), rtol=0, atol=1e-15)


def test_zero_params_from_zero_state_stay_zero():
    p = beta_store(zero=True).constants()
    assert np.all(beta_from_characteristics(history(), p).value == 0.0)


def test_saturated_forget_gate_preserves_memory():
    store = beta_store(seed=1)
    store["beta.b_forget"].fill(20.0)
    p = store.constants()
    state = LstmState(Tensor(np.array([[0.1, -0.2, 0.6, -0.3]])))
    x = Tensor([[0.5, -0.5, 0.2]])
    nxt = lstm_step(x, state, p)
    # recompute i * g by hand
    h, W, U = state.h.value[0], {}, {}
    for g in ("input", "cand"):
        W[g], U[g] = store[f"beta.W_{g}"], store[f"beta.U_{g}"]
    i = 1 / (1 + np.exp(-(W["input"] @ h + U["input"] @ x.value[0])))
    cand = np.tanh(W["cand"] @ h + U["cand"] @ x.value[0])
    np.testing.assert_allclose(nxt.c.value[0], np.array([0.6, -0.3]) + i * cand, atol=1e-8)


def test_identical_histories_share_betas():
    p = beta_store(seed=2).constants()
    x = history(M=3, seed=2)
    x[:, 2] = x[:, 0]
    b = beta_from_characteristics(x, p).value
    np.testing.assert_array_equal(b[0], b[2])


def test_time_order_matters():
    p = beta_store(seed=3).constants()
    x = history(M=1, seed=3)
    b1 = beta_from_characteristics(x, p).value
    b2 = beta_from_characteristics(x[::-1], p).value
    assert not np.allclose(b1, b2)


def test_other_stocks_do_not_change_a_beta():
    p = beta_store(seed=4, H=4, K=2).constants()
    x = history(M=6, seed=4)
    full = beta_from_characteristics(x, p).value
    alone = beta_from_characteristics(x[:, 2:3], p).value
    # batch size changes the BLAS summation order, hence ulp-level tolerance
    np.testing.assert_allclose(full[2], alone[0], rtol=0, atol=1e-14)


def test_every_step_matches_truncated_histories():
    p = beta_store(seed=5).constants()
    x = history(T=4, seed=5)
    seq = beta_from_characteristics(x, p, every_step=True).value
    for t in range(4):
        np.testing.assert_allclose(seq[t], beta_from_characteristics(x[:t + 1], p).value, atol=1e-15)


def test_list_histories_and_ragged_rejection():
    p = beta_store(seed=6).constants()
    x = history(M=2, seed=6)
    b = beta_from_characteristics([x[:, 0], x[:, 1]], p).value
    np.testing.assert_array_equal(b, beta_from_characteristics(x, p).value)
    with pytest.raises(AlignmentError):
        beta_from_characteristics([x[:, 0], x[:3, 1]], p)


def test_input_size_mismatch():
    p = beta_store(C=3).constants()
    with pytest.raises(DimensionError):
        beta_from_characteristics(np.zeros((2, 2, 4)), p)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0.1, 30.0))
def test_hidden_state_bounded(seed, scale_):
    p = beta_store(seed=seed, H=3, K=3).constants()
    b = beta_from_characteristics(scale_ * history(T=6, seed=seed), p, every_step=True).value
    assert np.abs(b).max() < 1.0


@pytest.mark.parametrize("H, K", [(2, 2), (4, 2)])
def test_beta_net_gradcheck(H, K):
    store = beta_store(C=3, H=H, K=K, seed=7)
    x = history(T=3, M=3, seed=7)
    target = np.random.default_rng(8).normal(size=(3, K))

    def f(p):
        b = beta_from_characteristics(x, p)
        d = b - Tensor(target)
        return tsum(d * d)

    assert grad_check(f, store).passed


def test_single_vs_two_step_gradcheck():
    store = beta_store(C=3, H=2, K=2, seed=9)
    x = history(T=2, M=2, seed=9)
    for steps in (1, 2):
        report = grad_check(lambda p: tsum(beta_from_characteristics(x[:steps], p)), store)
        assert report.passed
