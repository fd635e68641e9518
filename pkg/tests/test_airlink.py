import numpy as np
import pytest

from cfmcast.airlink import (DegenerateInputError, SequencingError, compute_beta,
                             make_orthogonal_pilots, make_pilot_book, round_dl,
                             round_ul1, round_ul2, round_ul3, round_ul_antenna)
from cfmcast.distributed import cross_terms
from cfmcast.scenario import ConfigurationError, crandn

from conftest import random_instance, rel_err


# -- pilots ---------------------------------------------------------------------

def test_two_pilots_orthogonal():
    P = make_orthogonal_pilots(2, 2)
    assert abs(np.vdot(P[:, 0], P[:, 1])) < 1e-12
    assert np.vdot(P[:, 0], P[:, 0]).real == pytest.approx(2.0)


@pytest.mark.parametrize('tau', [1, 3, 7, 16])
def test_single_pilot_norm(tau):
    p = make_orthogonal_pilots(1, tau)[:, 0]
    assert np.vdot(p, p).real == pytest.approx(tau)
    np.testing.assert_allclose(np.abs(p), 1.0)


def test_dft_gram_is_scaled_identity():
    P = make_orthogonal_pilots(8, 8)
    np.testing.assert_allclose(P.conj().T @ P, 8 * np.eye(8), atol=1e-12)


def test_too_many_pilots_rejected():
    with pytest.raises(ConfigurationError):
        make_orthogonal_pilots(5, 4)


def test_pilot_book_minimum_lengths_and_norms():
    pb = make_pilot_book(K=6, N=2, G=3)
    assert pb.lengths == {'ul': 12, 'ul1': 6, 'ul2': 3, 'dl': 3}
    for k in range(6):
        assert np.linalg.norm(pb.ul_antenna[k]) ** 2 == pytest.approx(12 * 2)
    # all K*N antenna pilots are mutually orthogonal
    stacked = pb.ul_antenna.transpose(1, 0, 2).reshape(12, 12)
    np.testing.assert_allclose(stacked.conj().T @ stacked, 12 * np.eye(12), atol=1e-10)


# -- beta -----------------------------------------------------------------------

def test_beta_single_ue():
    X = np.array([[1.0, 1.0], [1.0, 1.0]])        # per-symbol power 2
    assert compute_beta([X], 0.1) == pytest.approx(0.05)


def test_beta_max_rule():
    X1 = np.ones((1, 3))
    X2 = 2 * np.ones((1, 3))
    assert compute_beta([X1, X2], 0.4) == pytest.approx(0.1)


def test_beta_all_zero():
    with pytest.raises(DegenerateInputError):
        compute_beta([np.zeros((2, 3))], 0.1)


def test_beta_ul1_homogeneity(rng):
    H, groups, V, W, w = random_instance(rng)
    pb = make_pilot_book(4, 2, 2)
    b1, _ = round_ul1(H, V, pb.ul1, 0.1, 0.0, rng)
    b2, _ = round_ul1(H, 3.0 * V, pb.ul1, 0.1, 0.0, rng)
    assert b2.beta == pytest.approx(b1.beta / 9.0)


def test_beta_ul_antenna():
    rng = np.random.default_rng(0)
    H = crandn(rng, (1, 3, 2, 2))
    pb = make_pilot_book(3, 2, 1)
    blk, _ = round_ul_antenna(H, pb.ul_antenna, 0.1, 0.0, rng)
    assert blk.beta == pytest.approx(0.1 / 2)


# -- noiseless exactness ----------------------------------------------------------

def test_ul_antenna_exact(rng):
    H, *_ = random_instance(rng, B=3, K=4)
    pb = make_pilot_book(4, 2, 2)
    _, Hhat = round_ul_antenna(H, pb.ul_antenna, 0.2, 0.0, rng)
    assert rel_err(Hhat, H) <= 1e-10


def test_ul_antenna_contamination():
    rng = np.random.default_rng(1)
    H = crandn(rng, (1, 2, 2, 1))
    # both UEs share the same antenna pilot
    pb = make_pilot_book(2, 1, 1, lengths={'ul': 2}, reuse={'ul': [0, 0]})
    _, Hhat = round_ul_antenna(H, pb.ul_antenna, 1.0, 0.0, rng)
    assert rel_err(Hhat[:, 0], H[:, 0] + H[:, 1]) <= 1e-12
    assert rel_err(Hhat[:, 1], H[:, 0] + H[:, 1]) <= 1e-12


def test_ul1_exact_and_power(rng):
    H, groups, V, W, w = random_instance(rng, B=3)
    pb = make_pilot_book(4, 2, 2)
    blk, hhat = round_ul1(H, V, pb.ul1, 0.1, 0.0, rng)
    assert rel_err(hhat, np.einsum('bkmn,kn->bkm', H, V)) <= 1e-10
    peak = blk.beta * np.max(np.sum(np.abs(V) ** 2, axis=1))
    assert peak <= 0.1 * (1 + 1e-12)
    assert blk.tx_power <= 0.1 * (1 + 1e-12)


def test_ul1_unit_combiner_noise_scaling():
    H = crandn(np.random.default_rng(2), (1, 1, 3, 2))
    V = np.array([[1.0, 0.0]], dtype=complex)
    errs = {}
    for tau in (4, 64):
        p = make_orthogonal_pilots(1, tau)
        e = []
        for s in range(400):
            blk, hhat = round_ul1(H, V, p, 1.0, 0.5, np.random.default_rng(s))
            e.append(hhat[0, 0] - H[0, 0, :, 0])
        errs[tau] = np.mean(np.abs(np.array(e)) ** 2)
    # error variance sigma^2 / (tau beta): 16x more symbols, 16x less error
    assert errs[4] / errs[64] == pytest.approx(16.0, rel=0.2)
    assert errs[4] == pytest.approx(0.5 / 4, rel=0.15)


def test_ul2_exact(rng):
    H, groups, V, W, w = random_instance(rng, weights=True)
    pb = make_pilot_book(4, 2, 2)
    blk, fhat = round_ul2(H, V, w, groups, pb.ul2, 0.1, 0.0, rng)
    h = np.einsum('bkmn,kn->bkm', H, V) * w[None, :, None]
    f = np.stack([h[:, groups == g].sum(axis=1) for g in range(2)], axis=1)
    assert rel_err(fhat, f) <= 1e-10
    assert blk.tx_power <= 0.1 * (1 + 1e-12)


def test_ul2_zero_weight_group_is_noise():
    rng = np.random.default_rng(3)
    H, groups, V, W, w = random_instance(rng)
    w = np.where(groups == 0, 0.0, 1.0)
    pb = make_pilot_book(4, 2, 2)
    est = np.stack([round_ul2(H, V, w, groups, pb.ul2, 1.0, 1.0, rng)[1][:, 0]
                    for _ in range(4000)])
    assert np.max(np.abs(est.mean(axis=0))) < 0.05


def test_ul2_contaminated_groups():
    rng = np.random.default_rng(4)
    H, groups, V, W, w = random_instance(rng)
    pb = make_pilot_book(4, 2, 2, lengths={'ul2': 2}, reuse={'ul2': [0, 0]})
    _, fhat = round_ul2(H, V, w, groups, pb.ul2, 1.0, 0.0, rng)
    h = np.einsum('bkmn,kn->bkm', H, V)
    assert rel_err(fhat[:, 0], h.sum(axis=1)) <= 1e-12


def test_dl_exact_and_power(rng):
    H, groups, V, W, w = random_instance(rng, B=3)
    pb = make_pilot_book(4, 2, 2)
    blk, ghat = round_dl(H, W, groups, pb.dl, 0.0, rng)
    g = np.einsum('bkmn,bkm->kn', H.conj(), W[:, groups])
    assert rel_err(ghat, g) <= 1e-10
    # orthogonal pilots: block-averaged power equals the precoder power
    P = np.sum(np.abs(W) ** 2, axis=(1, 2))
    assert blk.tx_power == pytest.approx(P.max(), rel=1e-12)


def test_dl_zero_precoders_noise_only():
    rng = np.random.default_rng(5)
    H, groups, V, W, w = random_instance(rng)
    pb = make_pilot_book(4, 2, 2)
    est = np.stack([round_dl(H, np.zeros_like(W), groups, pb.dl, 1.0, rng)[1]
                    for _ in range(4000)])
    assert np.max(np.abs(est.mean(axis=0))) < 0.05


def test_ul3_single_bs_cross_term(rng):
    H, groups, V, W, w = random_instance(rng, B=1, weights=True)
    pb = make_pilot_book(4, 2, 2)
    dl, _ = round_dl(H, W, groups, pb.dl, 0.0, rng)
    blk, xihat = round_ul3(H, V, w, dl, pb.dl, 0.1, 0.0, rng)
    h = np.einsum('bkmn,kn->bkm', H, V)[0]
    direct = np.einsum('k,km,kl,gl->gm', w, h, h.conj(), W[0])
    assert rel_err(xihat[0], direct) <= 1e-10
    assert blk.tau == pb.lengths['dl']
    assert blk.tx_power <= 0.1 * (1 + 1e-12)


def test_ul3_multi_bs_matches_cross_terms(rng):
    H, groups, V, W, w = random_instance(rng, B=3, weights=True)
    pb = make_pilot_book(4, 2, 2)
    dl, _ = round_dl(H, W, groups, pb.dl, 0.0, rng)
    _, xihat = round_ul3(H, V, w, dl, pb.dl, 1.0, 0.0, rng)
    assert rel_err(xihat, cross_terms(H, V, w, W)) <= 1e-10


def test_ul3_zero_combiners_noise_only():
    rng = np.random.default_rng(6)
    H, groups, V, W, w = random_instance(rng)
    pb = make_pilot_book(4, 2, 2)
    dl, _ = round_dl(H, W, groups, pb.dl, 0.0, rng)
    est = np.stack([round_ul3(H, np.zeros_like(V), w, dl, pb.dl, 1.0, 1.0, rng)[1]
                    for _ in range(3000)])
    assert np.all(np.isfinite(est))
    assert np.max(np.abs(est.mean(axis=0))) < 0.1


def test_ul3_needs_dl_block(rng):
    H, groups, V, W, w = random_instance(rng)
    pb = make_pilot_book(4, 2, 2)
    with pytest.raises(SequencingError):
        round_ul3(H, V, w, None, pb.dl, 1.0, 0.0, rng)
    ul1, _ = round_ul1(H, V, pb.ul1, 1.0, 0.0, rng)
    with pytest.raises(SequencingError):
        round_ul3(H, V, w, ul1, pb.dl, 1.0, 0.0, rng)


@pytest.mark.parametrize('trials', [100, 1600])
def test_unbiased_estimates(trials):
    rng = np.random.default_rng(trials)
    H, groups, V, W, w = random_instance(rng)
    pb = make_pilot_book(4, 2, 2)
    target = np.einsum('bkmn,kn->bkm', H, V)
    mean = np.mean([round_ul1(H, V, pb.ul1, 1.0, 1.0, rng)[1] for _ in range(trials)], axis=0)
    err = np.linalg.norm(mean - target)
    blk, _ = round_ul1(H, V, pb.ul1, 1.0, 0.0, rng)
    # expected norm of the averaging error: sqrt(#entries * sigma^2 / (tau beta trials))
    scale = np.sqrt(target.size / (pb.lengths['ul1'] * blk.beta * trials))
    assert err < 3 * scale
