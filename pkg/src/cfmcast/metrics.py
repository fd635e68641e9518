"""MSE, SINR, group rates and pilot-overhead accounting.

Array conventions used across the package::

    H  (B, K, M, N)  uplink channel of UE k at BS b
    W  (B, G, M)     precoder of BS b for group g
    V  (K, N)        combiner of UE k
    groups (K,)      group index of every UE

Metrics are always evaluated on the true channels.
"""

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

__all__ = ['effective_uplink', 'downlink_channels', 'combined_gains', 'mse_k', 'sinr_k',
           'ue_mse', 'ue_sinr', 'sum_group_rate', 'bs_power', 'Overhead', 'pilot_overhead',
           'effective_rate', 'IterationTrace', 'ALGORITHMS']

ALGORITHMS = ('Centralized', 'LocalMMSE', 'LocalMF', 'BR', 'BR-GS', 'GB')


def effective_uplink(H, V):
    """h[b, k] = H[b, k] @ v_k."""
    return np.einsum('bkmn,kn->bkm', H, V)


def downlink_channels(H, W):
    """Per-group received directions: out[k, g] = sum_b H[b, k]^H w[b, g]."""
    return np.einsum('bkmn,bgm->kgn', H.conj(), W)


def combined_gains(H, W, V):
    """a[k, g] = v_k^H sum_b H[b, k]^H w[b, g]."""
    return np.einsum('kn,kgn->kg', V.conj(), downlink_channels(H, W))


def mse_k(Hk, Wagg, v, sigma2, g):
    """MSE of one UE from its aggregated channel ``Hk`` (BM x N).

    ``Wagg`` holds the aggregated precoders as rows, shape (G, BM).
    """
    a = v.conj() @ (Hk.conj().T @ Wagg.T)
    return float(np.sum(np.abs(a) ** 2) - 2.0 * np.real(a[g])
                 + sigma2 * np.real(np.vdot(v, v)) + 1.0)


def sinr_k(Hk, Wagg, v, sigma2, g):
    if not np.any(v):
        return 0.0
    a = np.abs(v.conj() @ (Hk.conj().T @ Wagg.T)) ** 2
    interf = np.sum(a) - a[g]
    return float(a[g] / (interf + sigma2 * np.real(np.vdot(v, v))))


def ue_mse(H, W, V, groups, sigma2):
    a = combined_gains(H, W, V)
    K = V.shape[0]
    own = a[np.arange(K), groups]
    return (np.sum(np.abs(a) ** 2, axis=1) - 2.0 * own.real
            + sigma2 * np.sum(np.abs(V) ** 2, axis=1) + 1.0)


def ue_sinr(H, W, V, groups, sigma2):
    p = np.abs(combined_gains(H, W, V)) ** 2
    K = V.shape[0]
    sig = p[np.arange(K), groups]
    den = p.sum(axis=1) - sig + sigma2 * np.sum(np.abs(V) ** 2, axis=1)
    with np.errstate(divide='ignore', invalid='ignore'):
        out = np.where(sig > 0, sig / den, 0.0)
    return out


def sum_group_rate(sinr, groups, G=None):
    """Per-group rate (worst UE of the group) and their sum, in bps/Hz."""
    sinr = np.asarray(sinr, dtype=float)
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    ue_rate = np.log2(1.0 + sinr)
    Rg = np.array([ue_rate[groups == g].min() for g in range(G)])
    return Rg, float(Rg.sum())


def bs_power(W):
    return np.sum(np.abs(W) ** 2, axis=(1, 2))


class Overhead(NamedTuple):
    per_iteration: int
    total: int
    iterative: bool


def _min_lengths(K, G, N):
    return {'ul': K * N, 'ul1': K, 'ul2': G, 'dl': G}


def pilot_overhead(algorithm, K, G, N, iterations, lengths=None):
    """Pilot symbols spent by ``algorithm`` over ``iterations`` bi-directional rounds.

    ``lengths`` may enlarge the per-round pilot lengths (keys ``ul``, ``ul1``,
    ``ul2``, ``dl``); missing keys default to the minimum orthogonal sizes.
    The centralized reference trains once, so its total does not scale with
    the iteration count.
    """
    tau = _min_lengths(K, G, N)
    if lengths:
        tau.update({k: int(v) for k, v in lengths.items() if v is not None})
    per_iter = {
        'LocalMMSE': tau['ul1'] + tau['dl'],
        'LocalMF': tau['ul2'] + tau['dl'],
        'BR': tau['ul1'] + 2 * tau['dl'],
        'BR-GS': tau['ul2'] + 2 * tau['dl'],
        'GB': tau['ul2'] + 2 * tau['dl'],
    }
    if algorithm in ('Centralized', 'CentralizedSG'):
        total = tau['ul'] + tau['dl']
        return Overhead(total, total, False)
    if algorithm not in per_iter:
        raise ValueError(f'unknown algorithm {algorithm!r}')
    r = per_iter[algorithm]
    return Overhead(r, r * int(iterations), True)


def effective_rate(R, r_ce, r_t, i):
    """Rate discounted by the fraction ``i * r_ce / r_t`` of the block spent on pilots.

    Clamped at zero once the training overhead fills the resource block.
    """
    frac = 1.0 - np.asarray(i, dtype=float) * r_ce / float(r_t)
    return np.maximum(frac, 0.0) * np.asarray(R, dtype=float)


@dataclass
class IterationTrace:
    """Per-iteration metrics of one solver run (row ``i`` is after iteration ``i+1``)."""
    sum_mse: list = field(default_factory=list)
    ue_mse: list = field(default_factory=list)
    ue_sinr: list = field(default_factory=list)
    group_rate: list = field(default_factory=list)
    rate: list = field(default_factory=list)
    bs_power: list = field(default_factory=list)
    pilot_symbols: list = field(default_factory=list)
    objective: list = field(default_factory=list)

    def record(self, H, W, V, groups, sigma2_ue, weights=None, pilot_symbols=0, objective=None):
        G = W.shape[1]
        m = ue_mse(H, W, V, groups, sigma2_ue)
        s = ue_sinr(H, W, V, groups, sigma2_ue)
        Rg, R = sum_group_rate(s, groups, G)
        w = np.ones_like(m) if weights is None else np.asarray(weights)
        self.sum_mse.append(float(np.dot(w, m)))
        self.ue_mse.append(m)
        self.ue_sinr.append(s)
        self.group_rate.append(Rg)
        self.rate.append(R)
        self.bs_power.append(bs_power(W))
        self.pilot_symbols.append(int(pilot_symbols))
        self.objective.append(float(np.dot(w, m)) if objective is None else float(objective))

    def __len__(self):
        return len(self.rate)

    def as_arrays(self):
        return {k: np.asarray(v) for k, v in self.__dict__.items()}
