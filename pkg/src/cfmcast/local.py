"""Local MMSE and local MF precoders computed independently at every BS.

Each BS only uses its own effective channels (perfect form) or its own
received pilot block (pilot form).  The power dual ``lam`` is found by
bisection so that the BS meets its power budget.
"""

import numpy as np

from ._linalg import NumericalError, solve_psd

__all__ = ['local_mmse_perfect', 'local_mf_perfect', 'local_mmse_pilot', 'local_mf_pilot',
           'bisect_lambda', 'planned_weights', 'LAMBDA_FLOOR']

LAMBDA_FLOOR = 1e-9


def _group_sums(h, weights, groups, G):
    out = np.zeros((G, h.shape[1]), dtype=complex)
    np.add.at(out, groups, weights[:, None] * h)
    return out


def local_mmse_perfect(Hb, V, weights, groups, lam, G=None):
    """Local MMSE precoders of one BS from its channels ``Hb`` (K, M, N).

    Returns the (G, M) array ``(sum_k w_k h_k h_k^H + lam I)^{-1} sum_{k in g} w_k h_k``.
    """
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    weights = np.asarray(weights, dtype=float)
    h = np.einsum('kmn,kn->km', Hb, V)
    A = (h.T * weights) @ h.conj() + lam * np.eye(h.shape[1])
    return solve_psd(A, _group_sums(h, weights, groups, G).T).T


def local_mf_perfect(Hb, V, weights, groups, lam, G=None):
    """Local MF precoders ``sum_{k in g} w_k h_k / lam`` of one BS, shape (G, M)."""
    if not lam > 0:
        raise ValueError(f'MF precoder needs lam > 0, got {lam}')
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    h = np.einsum('kmn,kn->km', Hb, V)
    return _group_sums(h, np.asarray(weights, dtype=float), groups, G) / lam


def planned_weights(pilots, weights):
    """Pilot-domain weighting ``P diag(w) P^H / tau`` for a UE-specific pilot set.

    With orthogonal pilots ``Y Pi Y^H`` equals ``tau * beta * sum_k w_k h_k h_k^H``
    plus noise, which reduces to ``Y Y^H`` when all weights are one and the
    pilot length equals the number of UEs.
    """
    tau = pilots.shape[0]
    return (pilots * np.asarray(weights, dtype=float)) @ pilots.conj().T / tau


def local_mmse_pilot(Y, pilots, weights, groups, lam, beta, sigma2, G=None):
    """Local MMSE precoders of one BS from its UE-specific uplink block ``Y`` (M, tau).

    The noise contribution to the sample covariance is removed through the
    ``tau * beta * lam - sigma2 * tr(Pi)`` regularizer.
    """
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    weights = np.asarray(weights, dtype=float)
    tau = pilots.shape[0]
    Pi = planned_weights(pilots, weights)
    M = Y.shape[0]
    load = tau * beta * lam - sigma2 * np.real(np.trace(Pi))
    A = Y @ Pi @ Y.conj().T + load * np.eye(M)
    proj = Y @ pilots                                    # (M, K)
    rhs = np.sqrt(beta) * _group_sums(proj.T, weights, groups, G)
    return solve_psd(A, rhs.T).T


def local_mf_pilot(Y, pilots, lam, beta):
    """Local MF precoders ``Y p_g / (lam tau sqrt(beta))`` from a group-specific block."""
    if not lam > 0:
        raise ValueError(f'MF precoder needs lam > 0, got {lam}')
    tau = pilots.shape[0]
    return (Y @ pilots).T / (lam * tau * np.sqrt(beta))


def bisect_lambda(precoder_map, rho, lam_min=LAMBDA_FLOOR, max_iter=60, max_doublings=400,
                  rtol=1e-12):
    """Smallest ``lam >= lam_min`` whose precoders meet the power budget ``rho``.

    ``precoder_map(lam)`` returns the (G, M) precoders of one BS; their total
    power must be non-increasing in ``lam``.  The upper end of the bracket is
    doubled until it is feasible, then the bracket is halved at most
    ``max_iter`` times (or until its relative width falls below ``rtol``).
    Returns ``(lam, W)``.
    """
    def power(lam):
        W = precoder_map(lam)
        if not np.all(np.isfinite(W)):
            raise NumericalError(f'non-finite precoders at lam={lam:g}')
        return float(np.sum(np.abs(W) ** 2)), W

    p_lo, W_lo = power(lam_min)
    if p_lo <= rho:
        return lam_min, W_lo
    lo, hi = lam_min, max(2.0 * lam_min, 1e-300)
    p_hi, W_hi = power(hi)
    for _ in range(max_doublings):
        if p_hi <= rho:
            break
        if p_hi > p_lo * (1.0 + 1e-9):
            raise NumericalError('precoder power increases with lam; map is not monotone')
        lo, p_lo = hi, p_hi
        hi *= 2.0
        p_hi, W_hi = power(hi)
    else:
        raise NumericalError('could not bracket the power dual')
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        p_mid, W_mid = power(mid)
        if p_mid > p_lo * (1.0 + 1e-9) or p_mid < p_hi * (1.0 - 1e-9):
            raise NumericalError('precoder power is not monotone in lam')
        if p_mid > rho:
            lo, p_lo = mid, p_mid
        else:
            hi, p_hi, W_hi = mid, p_mid, W_mid
        if hi - lo <= rtol * hi:
            break
    return hi, W_hi
