import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfmcast.centralized import combiners_mmse
from cfmcast.metrics import (IterationTrace, effective_rate, mse_k, pilot_overhead, sinr_k,
                             sum_group_rate, ue_mse, ue_sinr)

from conftest import random_instance


def _aggregated(H, W, k):
    B, K, M, N = H.shape
    return H[:, k].reshape(B * M, N), W.transpose(1, 0, 2).reshape(W.shape[1], B * M)


def test_zero_combiner_mse_is_one(rng):
    H, groups, V, W, w = random_instance(rng)
    Hk, Wagg = _aggregated(H, W, 0)
    assert mse_k(Hk, Wagg, np.zeros(2, complex), 0.3, groups[0]) == pytest.approx(1.0)


def test_perfect_equalization_mse_zero():
    Hk = np.array([[1.0 + 0j]])
    Wagg = np.array([[2.0 + 0j], [0.0]])             # group 0 precoder, group 1 silent
    v = np.array([0.5 + 0j])
    assert mse_k(Hk, Wagg, v, 0.0, 0) == pytest.approx(0.0, abs=1e-15)


def test_mmse_identity(rng):
    for _ in range(10):
        H, groups, V, W, w = random_instance(rng, B=3)
        V = combiners_mmse(H, W, groups, 0.2)
        mse = ue_mse(H, W, V, groups, 0.2)
        sinr = ue_sinr(H, W, V, groups, 0.2)
        np.testing.assert_allclose(mse, 1.0 / (1.0 + sinr), rtol=1e-9)


def test_scalar_and_vector_forms_agree(rng):
    H, groups, V, W, w = random_instance(rng, B=3)
    mse = ue_mse(H, W, V, groups, 0.4)
    sinr = ue_sinr(H, W, V, groups, 0.4)
    for k in range(len(groups)):
        Hk, Wagg = _aggregated(H, W, k)
        assert mse_k(Hk, Wagg, V[k], 0.4, groups[k]) == pytest.approx(mse[k], rel=1e-12)
        assert sinr_k(Hk, Wagg, V[k], 0.4, groups[k]) == pytest.approx(sinr[k], rel=1e-12)


def test_sinr_arithmetic():
    Hk = np.array([[2.0 + 0j]])
    Wagg = np.array([[1.0 + 0j]])
    assert sinr_k(Hk, Wagg, np.array([1.0 + 0j]), 1.0, 0) == pytest.approx(4.0)


@settings(max_examples=30, deadline=None)
@given(c=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3), seed=st.integers(0, 999))
def test_sinr_scale_invariant(c, seed):
    H, groups, V, W, w = random_instance(np.random.default_rng(seed))
    np.testing.assert_allclose(ue_sinr(H, W, c * V, groups, 0.1),
                               ue_sinr(H, W, V, groups, 0.1), rtol=1e-9)


def test_zero_intended_precoder(rng):
    H, groups, V, W, w = random_instance(rng)
    W[:, 0] = 0
    sinr = ue_sinr(H, W, V, groups, 0.1)
    assert np.all(sinr[groups == 0] == 0)


def test_group_rate_min_rule():
    Rg, R = sum_group_rate(np.array([3.0, 1.0]), np.array([0, 0]))
    assert Rg[0] == pytest.approx(1.0) and R == pytest.approx(1.0)
    assert sum_group_rate(np.zeros(4), np.array([0, 1, 0, 1]))[1] == 0.0


def test_singleton_groups_unicast():
    s = np.array([1.0, 3.0, 7.0])
    assert sum_group_rate(s, np.arange(3))[1] == pytest.approx(1 + 2 + 3)


@pytest.mark.parametrize('algo, total', [
    ('Centralized', 72), ('LocalMMSE', 400), ('LocalMF', 160),
    ('BR', 480), ('BR-GS', 240), ('GB', 240)])
def test_overhead_rows(algo, total):
    assert pilot_overhead(algo, 32, 8, 2, 10).total == total


@settings(max_examples=50, deadline=None)
@given(K=st.integers(1, 64), G=st.integers(1, 16), N=st.integers(1, 4), I=st.integers(0, 500))
def test_overhead_formulas(K, G, N, I):
    rows = {'LocalMMSE': (K + G) * I, 'LocalMF': 2 * G * I, 'BR': (K + 2 * G) * I,
            'BR-GS': 3 * G * I, 'GB': 3 * G * I}
    for a, v in rows.items():
        assert pilot_overhead(a, K, G, N, I).total == v
    assert pilot_overhead('Centralized', K, G, N, I).total == K * N + G


def test_overhead_enlarged_pilots():
    o = pilot_overhead('BR', 8, 4, 2, 3, lengths={'ul1': 16, 'dl': 8})
    assert o.per_iteration == 16 + 2 * 8 and o.total == 3 * 32


def test_overhead_unknown_algorithm():
    with pytest.raises(ValueError):
        pilot_overhead('ZF', 8, 4, 2, 3)


def test_effective_rate_examples():
    assert effective_rate(20.0, 48, 1000, 10) == pytest.approx(10.4)
    assert effective_rate(20.0, 48, 1000, 0) == pytest.approx(20.0)
    assert effective_rate(20.0, 50, 1000, 20) == 0.0
    assert effective_rate(20.0, 50, 1000, 30) == 0.0


@settings(max_examples=50, deadline=None)
@given(R=st.floats(0, 100), r_ce=st.integers(1, 100), r_t=st.integers(1, 10_000),
       i=st.integers(1, 200))
def test_effective_rate_below_rate(R, r_ce, r_t, i):
    e = float(effective_rate(R, r_ce, r_t, i))
    assert 0.0 <= e <= R
    if R > 0:
        assert e < R


def test_trace_uses_given_channels(rng):
    H, groups, V, W, w = random_instance(rng)
    tr = IterationTrace()
    tr.record(H, W, V, groups, 0.1, pilot_symbols=7)
    tr.record(H, 2 * W, V, groups, 0.1, pilot_symbols=14)
    assert len(tr) == 2
    a = tr.as_arrays()
    assert a['pilot_symbols'].tolist() == [7, 14]
    np.testing.assert_allclose(a['bs_power'][1], 4 * a['bs_power'][0])
    assert np.all(a['rate'] >= 0)
