"""Distributed best-response (BR, BR-GS) and gradient-based (GB) precoding.

Every BS updates its own precoders from local quantities plus cross terms
that summarize the other BSs' precoders of the previous iteration.  With
perfect CSI the cross terms are computed from the true channels; in pilot
mode they are measured over the air through the UL-3 retransmission of the
previous DL block.

:func:`run_bidirectional` drives the full training loop for the three
distributed designs and the two local baselines.
"""

from dataclasses import dataclass, field

import numpy as np

from ._linalg import NumericalError, solve_psd
from .airlink import (make_pilot_book, round_dl, round_ul1, round_ul2, round_ul3)
from .centralized import combiners_from_dl, combiners_mmse, project_power
from .local import (LAMBDA_FLOOR, bisect_lambda, local_mf_perfect, local_mf_pilot,
                    local_mmse_perfect, local_mmse_pilot, planned_weights)
from .metrics import IterationTrace, effective_uplink, combined_gains, pilot_overhead
from .scenario import ConfigurationError

__all__ = ['StepConfig', 'CrossTermState', 'BidirectionalResult', 'group_sums',
           'local_covariance', 'cross_terms', 'lagrangian_gradient', 'br_delta_perfect',
           'brgs_delta_perfect', 'br_delta_pilot', 'brgs_delta_pilot', 'br_step',
           'gb_gradient_perfect', 'gb_gradient_pilot', 'gb_update_project',
           'run_bidirectional', 'DISTRIBUTED', 'LOCAL']

DISTRIBUTED = ('BR', 'BR-GS', 'GB')
LOCAL = ('LocalMMSE', 'LocalMF')


@dataclass(frozen=True)
class StepConfig:
    """Step sizes of the distributed updates.

    ``gb_step`` is dimensionless; the GB step actually applied is
    ``gb_step * rho_bs``.  ``schedule`` is ``'constant'`` or ``'decaying'``
    (step divided by the square root of the iteration index).  The defaults
    maximize the effective rate on the desk profile with noisy pilots; small
    BR steps keep far BSs from amplifying their noisy estimates.
    """
    alpha_br: float = 0.1
    gb_step: float = 0.3
    schedule: str = 'decaying'
    updates_per_iteration: int = 1

    def __post_init__(self):
        if not 0 < self.alpha_br <= 1:
            raise ConfigurationError('alpha_br must lie in (0, 1]')
        if not self.gb_step > 0:
            raise ConfigurationError('gb_step must be positive')
        if self.schedule not in ('constant', 'decaying'):
            raise ConfigurationError(f'unknown step schedule {self.schedule!r}')
        if self.updates_per_iteration < 1:
            raise ConfigurationError('updates_per_iteration must be >= 1')

    def factor(self, i):
        return 1.0 if self.schedule == 'constant' else 1.0 / np.sqrt(i)


@dataclass
class CrossTermState:
    """Precoders of the previous iteration and the cross terms built from them."""
    W_prev: np.ndarray
    xi: np.ndarray = None
    iteration: int = 0


# -- perfect-CSI building blocks -------------------------------------------------

def group_sums(H, V, weights, groups, G):
    """F[b, g] = sum_{k in g} w_k H[b, k] v_k, shape (B, G, M)."""
    h = effective_uplink(H, V) * np.asarray(weights, dtype=float)[None, :, None]
    F = np.zeros((H.shape[0], G, H.shape[2]), dtype=complex)
    for g in range(G):
        F[:, g] = h[:, groups == g].sum(axis=1)
    return F


def local_covariance(H, V, weights):
    """A[b] = sum_k w_k h_bk h_bk^H, shape (B, M, M)."""
    h = effective_uplink(H, V)
    return np.einsum('k,bkm,bkn->bmn', np.asarray(weights, dtype=float), h, h.conj())


def cross_terms(H, V, weights, W):
    """Network-wide cross terms sum_bbar sum_k w_k h_bk h_bbar,k^H w_bbar,g, shape (B, G, M).

    The term of BS ``b`` itself is included; subtract ``A[b] @ w[b, g]`` to
    get the contribution of the other BSs only.
    """
    h = effective_uplink(H, V)
    a = combined_gains(H, W, V)                         # (K, G)
    return np.einsum('k,bkm,kg->bgm', np.asarray(weights, dtype=float), h, a)


def gb_gradient_perfect(H, V, weights, groups, W):
    """Gradient of the weighted sum MSE w.r.t. every w[b, g] (Wirtinger, times two)."""
    G = W.shape[1]
    return -2.0 * (group_sums(H, V, weights, groups, G) - cross_terms(H, V, weights, W))


def lagrangian_gradient(H, V, weights, groups, W, lam):
    return gb_gradient_perfect(H, V, weights, groups, W) + 2.0 * lam[:, None, None] * W


def _br_pieces(H, V, weights, groups, W_prev, group_specific=False):
    """Preconditioner without the dual and the dual-free half gradient, per BS."""
    G = W_prev.shape[1]
    F = group_sums(H, V, weights, groups, G)
    if group_specific:
        mats = np.einsum('bgm,bgn->bmn', F, F.conj())
    else:
        mats = local_covariance(H, V, weights)
    return mats, -(F - cross_terms(H, V, weights, W_prev))


def _br_direction(mat, half_grad, lam, w_prev):
    A = mat + lam * np.eye(mat.shape[0])
    return solve_psd(A, (half_grad + lam * w_prev).T).T


def br_delta_perfect(H, V, weights, groups, lam, W_prev):
    """Best-response direction ``w_prev - wbar`` for every BS, shape (B, G, M)."""
    mats, half = _br_pieces(H, V, weights, groups, W_prev)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (H.shape[0],))
    return np.stack([_br_direction(mats[b], half[b], lam[b], W_prev[b])
                     for b in range(H.shape[0])])


def brgs_delta_perfect(H, V, groups, lam, W_prev, weights=None):
    """BR-GS direction: the BR direction with the group-sum covariance ``sum_g f_g f_g^H``."""
    weights = np.ones(H.shape[1]) if weights is None else np.asarray(weights, dtype=float)
    mats, half = _br_pieces(H, V, weights, groups, W_prev, group_specific=True)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), (H.shape[0],))
    return np.stack([_br_direction(mats[b], half[b], lam[b], W_prev[b])
                     for b in range(H.shape[0])])


def br_step(W_prev, delta, alpha):
    return W_prev - alpha * delta


def gb_update_project(W_prev, grad, alpha, rho):
    """Gradient step followed by the per-BS scaling onto the power budget."""
    if not alpha > 0:
        raise ValueError('GB step must be positive')
    return project_power(W_prev - alpha * grad, rho)


# -- pilot-based building blocks ---------------------------------------------------

def _xi_from_block(Y3, pilots_dl, beta3):
    if Y3 is None:
        return None
    return (Y3 @ pilots_dl).T / (pilots_dl.shape[0] * np.sqrt(beta3))


def br_delta_pilot(Y1, Y3, pilots1, pilots_dl, weights, groups, lam, beta1, beta3, sigma2,
                   W_prev_b, G=None):
    """BR direction of one BS rebuilt from its UL-1 and UL-3 blocks, shape (G, M).

    ``Y3=None`` stands for vanishing cross terms (all previous precoders zero).
    """
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    weights = np.asarray(weights, dtype=float)
    tau1 = pilots1.shape[0]
    Pi = planned_weights(pilots1, weights)
    M = Y1.shape[0]
    load = tau1 * beta1 * lam - sigma2 * np.real(np.trace(Pi))
    A = Y1 @ Pi @ Y1.conj().T + load * np.eye(M)
    proj = (Y1 @ pilots1).T * weights[:, None]          # (K, M)
    own = np.zeros((G, M), dtype=complex)
    np.add.at(own, groups, proj)
    rhs = np.sqrt(beta1) * own - tau1 * beta1 * lam * W_prev_b
    xi = _xi_from_block(Y3, pilots_dl, beta3)
    if xi is not None:
        rhs = rhs - tau1 * beta1 * xi
    return -solve_psd(A, rhs.T).T


def brgs_delta_pilot(Y2, Y3, pilots2, pilots_dl, lam, beta2, beta3, sigma2, W_prev_b):
    """BR-GS direction of one BS rebuilt from its UL-2 and UL-3 blocks, shape (G, M)."""
    tau2 = pilots2.shape[0]
    M = Y2.shape[0]
    A = Y2 @ Y2.conj().T + tau2 * (beta2 * lam - sigma2) * np.eye(M)
    rhs = np.sqrt(beta2) * (Y2 @ pilots2).T - beta2 * tau2 * lam * W_prev_b
    xi = _xi_from_block(Y3, pilots_dl, beta3)
    if xi is not None:
        rhs = rhs - beta2 * tau2 * xi
    return -solve_psd(A, rhs.T).T


def gb_gradient_pilot(Y2, Y3, pilots2, pilots_dl, beta2, beta3):
    """Sum-MSE gradient of one BS from its UL-2 and UL-3 blocks, shape (G, M)."""
    f = (Y2 @ pilots2).T / (pilots2.shape[0] * np.sqrt(beta2))
    xi = _xi_from_block(Y3, pilots_dl, beta3)
    return -2.0 * f if xi is None else 2.0 * xi - 2.0 * f


# -- training loop ---------------------------------------------------------------

@dataclass
class BidirectionalResult:
    algorithm: str
    csi_mode: str
    W: np.ndarray
    V: np.ndarray
    trace: IterationTrace
    lam: list = field(default_factory=list)
    ue_tx_power: list = field(default_factory=list)   # per iteration, max over UL rounds
    bs_tx_power: list = field(default_factory=list)   # per iteration, DL block power
    cross_iteration: list = field(default_factory=list)  # iteration whose precoders fed UL-3
    iterates: list = field(default_factory=list)      # precoders after every iteration


def _bisect_step(delta_of_lam, W_prev_b, rho, lam_min, alpha):
    """Power dual for one BR step; returns ``(lam, delta)``.

    ``lam`` is the smallest value whose post-step precoders meet the budget.
    When the post-step power is not monotone in ``lam`` the dual is instead
    set so the best response itself is feasible, which keeps every convex
    combination with a feasible ``W_prev_b`` feasible.
    """
    try:
        lam, _ = bisect_lambda(lambda x: W_prev_b - alpha * delta_of_lam(x), rho, lam_min)
    except NumericalError:
        lam, _ = bisect_lambda(lambda x: W_prev_b - delta_of_lam(x), rho, lam_min)
    return lam, delta_of_lam(lam)


def _check_finite(name, i, *arrays):
    for x in arrays:
        if not np.all(np.isfinite(x)):
            raise NumericalError(f'{name}: non-finite iterate at iteration {i}')


def run_bidirectional(algorithm, H, groups, rho_bs, rho_ue, sigma2_bs, sigma2_ue, V0,
                      iterations, csi_mode='pilot', rng=None, weights=None, pilots=None,
                      steps=None, freeze_combiners=False):
    """Iterative bi-directional training for one algorithm on one channel draw.

    Per iteration: uplink round(s) with the current combiners, one precoder
    update per BS, one DL round with the new precoders, combiner update at
    every UE, then metrics on the true channels.  ``freeze_combiners`` keeps
    ``V0`` throughout (perfect CSI only), which isolates the precoder updates.
    """
    if algorithm not in DISTRIBUTED + LOCAL:
        raise ConfigurationError(f'unknown algorithm {algorithm!r}')
    if csi_mode not in ('perfect', 'pilot'):
        raise ConfigurationError(f'unknown CSI mode {csi_mode!r}')
    steps = StepConfig() if steps is None else steps
    if csi_mode == 'pilot' and steps.updates_per_iteration != 1:
        raise ConfigurationError('multiple updates per iteration need perfect CSI')
    if csi_mode == 'pilot' and freeze_combiners:
        raise ConfigurationError('frozen combiners need perfect CSI')
    groups = np.asarray(groups)
    B, K, M, N = H.shape
    G = int(groups.max()) + 1
    weights = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    rng = np.random.default_rng() if rng is None else rng
    pilots = make_pilot_book(K, N, G) if pilots is None else pilots
    r_ce = pilot_overhead(algorithm, K, G, N, 1, pilots.lengths).per_iteration

    V = np.array(V0, dtype=complex)
    W = np.zeros((B, G, M), dtype=complex)
    res = BidirectionalResult(algorithm, csi_mode, W, V, IterationTrace())
    dl_block = None
    lam = np.full(B, LAMBDA_FLOOR)
    for i in range(1, iterations + 1):
        W_prev = W
        if csi_mode == 'perfect':
            for _ in range(steps.updates_per_iteration):
                W, lam = _perfect_update(algorithm, H, V, weights, groups, W, rho_bs, steps, i)
            ue_power = 0.0
        else:
            W, lam, ue_power = _pilot_update(algorithm, H, V, weights, groups, W_prev, dl_block,
                                             pilots, rho_bs, rho_ue, sigma2_bs, steps, i, rng,
                                             res)
        _check_finite(algorithm, i, W)
        if csi_mode == 'perfect':
            if not freeze_combiners:
                V = combiners_mmse(H, W, groups, sigma2_ue)
            bs_power_dl = float(np.max(np.sum(np.abs(W) ** 2, axis=(1, 2))))
        else:
            dl_block, _ = round_dl(H, W, groups, pilots.dl, sigma2_ue, rng)
            V = combiners_from_dl(dl_block, pilots.dl, groups)
            bs_power_dl = dl_block.tx_power
        _check_finite(algorithm, i, V)
        res.lam.append(np.array(lam, dtype=float))
        res.ue_tx_power.append(ue_power)
        res.bs_tx_power.append(bs_power_dl)
        res.iterates.append(W.copy())
        res.trace.record(H, W, V, groups, sigma2_ue, weights, pilot_symbols=i * r_ce)
    res.W, res.V = W, V
    return res


def _perfect_update(algorithm, H, V, weights, groups, W_prev, rho, steps, i):
    B, K, M, N = H.shape
    G = W_prev.shape[1]
    lam = np.full(B, LAMBDA_FLOOR)
    W = np.empty_like(W_prev)
    if algorithm == 'GB':
        grad = gb_gradient_perfect(H, V, weights, groups, W_prev)
        return gb_update_project(W_prev, grad, steps.gb_step * rho * steps.factor(i), rho), lam
    if algorithm in ('BR', 'BR-GS'):
        alpha = steps.alpha_br * steps.factor(i)
        mats, half = _br_pieces(H, V, weights, groups, W_prev, algorithm == 'BR-GS')
        for b in range(B):
            lam[b], delta = _bisect_step(
                lambda x, b=b: _br_direction(mats[b], half[b], x, W_prev[b]),
                W_prev[b], rho, LAMBDA_FLOOR, alpha)
            W[b] = br_step(W_prev[b], delta, alpha)
        return W, lam
    for b in range(B):
        fn = local_mmse_perfect if algorithm == 'LocalMMSE' else local_mf_perfect
        lam[b], W[b] = bisect_lambda(lambda x, b=b: fn(H[b], V, weights, groups, x, G), rho)
    return W, lam


def _pilot_update(algorithm, H, V, weights, groups, W_prev, dl_block, pilots, rho_bs, rho_ue,
                  sigma2_bs, steps, i, rng, res):
    B, K, M, N = H.shape
    G = W_prev.shape[1]
    lam = np.full(B, LAMBDA_FLOOR)
    W = np.empty_like(W_prev)
    ue_power = 0.0
    if algorithm in ('LocalMMSE', 'BR'):
        blk, _ = round_ul1(H, V, pilots.ul1, rho_ue, sigma2_bs, rng)
    else:
        blk, _ = round_ul2(H, V, weights, groups, pilots.ul2, rho_ue, sigma2_bs, rng)
    ue_power = max(ue_power, blk.tx_power)
    blk3 = None
    if algorithm in DISTRIBUTED and dl_block is not None:
        # UL-3 carries the DL block of the previous iteration, i.e. W_prev
        blk3, _ = round_ul3(H, V, weights, dl_block, pilots.dl, rho_ue, sigma2_bs, rng)
        ue_power = max(ue_power, blk3.tx_power)
        res.cross_iteration.append(i - 1)
    lam_min = max(LAMBDA_FLOOR, sigma2_bs / blk.beta + LAMBDA_FLOOR)
    for b in range(B):
        Y = blk.Y[b]
        Y3 = None if blk3 is None else blk3.Y[b]
        beta3 = None if blk3 is None else blk3.beta
        if algorithm == 'LocalMMSE':
            lam[b], W[b] = bisect_lambda(
                lambda x: local_mmse_pilot(Y, pilots.ul1, weights, groups, x, blk.beta,
                                           sigma2_bs, G), rho_bs, lam_min)
        elif algorithm == 'LocalMF':
            lam[b], W[b] = bisect_lambda(lambda x: local_mf_pilot(Y, pilots.ul2, x, blk.beta),
                                         rho_bs, LAMBDA_FLOOR)
        elif algorithm == 'GB':
            grad = gb_gradient_pilot(Y, Y3, pilots.ul2, pilots.dl, blk.beta, beta3)
            W[b] = gb_update_project(W_prev[b][None], grad[None],
                                     steps.gb_step * rho_bs * steps.factor(i), rho_bs)[0]
        else:
            if algorithm == 'BR':
                def delta_of_lam(x):
                    return br_delta_pilot(Y, Y3, pilots.ul1, pilots.dl, weights, groups, x,
                                          blk.beta, beta3, sigma2_bs, W_prev[b], G)
            else:
                def delta_of_lam(x):
                    return brgs_delta_pilot(Y, Y3, pilots.ul2, pilots.dl, x, blk.beta, beta3,
                                            sigma2_bs, W_prev[b])
            alpha = steps.alpha_br * steps.factor(i)
            lam[b], delta = _bisect_step(delta_of_lam, W_prev[b], rho_bs, lam_min, alpha)
            W[b] = br_step(W_prev[b], delta, alpha)
    return W, lam, ue_power
