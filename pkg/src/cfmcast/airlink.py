"""Pilot construction, precoded pilot rounds and least-squares estimators.

Five training rounds are modelled:

* ``UL``   antenna-specific uplink pilots, BS estimates ``H[b, k]``.
* ``UL-1`` UE-specific pilots precoded with the combiner, BS estimates ``H[b, k] v_k``.
* ``UL-2`` group-specific pilots precoded with ``w_k v_k``, BS estimates the
  weighted group sum ``f[b, g]``.
* ``DL``   group pilots precoded with the BS precoders, UE estimates its
  effective downlink channel.
* ``UL-3`` every UE sends back its received DL block through
  ``w_k v_k v_k^H``; BS estimates the network-wide cross terms ``xi[b, g]``.

Pilot sets are stored column-wise: a ``(tau, count)`` array whose column ``j``
is one pilot sequence with squared norm ``tau``.
"""

from dataclasses import dataclass, field

import numpy as np

from .scenario import ConfigurationError, crandn

__all__ = ['PilotBook', 'PilotBlock', 'DegenerateInputError', 'SequencingError',
           'make_orthogonal_pilots', 'make_pilot_book', 'compute_beta', 'ls_estimate',
           'round_ul_antenna', 'round_ul1', 'round_ul2', 'round_dl', 'round_ul3']


class DegenerateInputError(ValueError):
    """The round has no signal to scale (all transmit blocks are zero)."""


class SequencingError(RuntimeError):
    """A round was invoked before the round it depends on."""


def make_orthogonal_pilots(count, length):
    """``count`` columns of the ``length``-point DFT basis (unit-modulus entries)."""
    if count > length:
        raise ConfigurationError(
            f'{count} orthogonal pilots do not fit in length {length}; '
            'use an explicit reuse map for contaminated pilots')
    t = np.arange(length)[:, None]
    j = np.arange(count)[None, :]
    return np.exp(-2j * np.pi * t * j / length)


@dataclass
class PilotBook:
    ul_antenna: np.ndarray   # (K, tau_ul, N)
    ul1: np.ndarray          # (tau_ul1, K)
    ul2: np.ndarray          # (tau_ul2, G)
    dl: np.ndarray           # (tau_dl, G)

    @property
    def lengths(self):
        return {'ul': self.ul_antenna.shape[1], 'ul1': self.ul1.shape[0],
                'ul2': self.ul2.shape[0], 'dl': self.dl.shape[0]}


def _reused(count, length, reuse):
    if reuse is None:
        return make_orthogonal_pilots(count, length)
    reuse = np.asarray(reuse, dtype=int)
    if reuse.shape != (count,):
        raise ConfigurationError(f'reuse map must have {count} entries')
    base = make_orthogonal_pilots(int(reuse.max()) + 1, length)
    return base[:, reuse]


def make_pilot_book(K, N, G, lengths=None, reuse=None):
    """Pilots for every round, minimum orthogonal lengths unless enlarged.

    ``reuse`` optionally maps a round name (``'ul'``, ``'ul1'``, ``'ul2'``,
    ``'dl'``) to an index array assigning each transmitter (UE antenna, UE or
    group) to a base pilot.  Shared indices produce contaminated pilots.
    """
    tau = {'ul': K * N, 'ul1': K, 'ul2': G, 'dl': G}
    if lengths:
        tau.update({k: int(v) for k, v in lengths.items() if v is not None})
    reuse = reuse or {}
    ul = _reused(K * N, tau['ul'], reuse.get('ul'))
    ul_antenna = ul.T.reshape(K, N, tau['ul']).transpose(0, 2, 1)
    return PilotBook(ul_antenna=np.ascontiguousarray(ul_antenna),
                     ul1=_reused(K, tau['ul1'], reuse.get('ul1')),
                     ul2=_reused(G, tau['ul2'], reuse.get('ul2')),
                     dl=_reused(G, tau['dl'], reuse.get('dl')))


@dataclass
class PilotBlock:
    """Received pilot signal of one round.

    ``Y`` is ``(B, M, tau)`` for uplink rounds and ``(K, N, tau)`` for the
    downlink round.  ``tx_power`` is the largest per-transmitter power seen in
    the round: per-symbol peak for UE transmissions, block-averaged per-symbol
    power for BS transmissions.
    """
    role: str
    Y: np.ndarray
    beta: float
    tx_power: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def tau(self):
        return self.Y.shape[-1]


def compute_beta(blocks, rho):
    """Common power scaling so that every UE's per-symbol power stays below ``rho``.

    ``blocks`` is a sequence (or stacked array) of unscaled transmit blocks of
    shape ``(N, tau)``.  The scaling is set by the UE with the largest
    per-symbol power.
    """
    peak = max(float(np.max(np.sum(np.abs(X) ** 2, axis=0))) for X in blocks)
    if not peak > 0:
        raise DegenerateInputError('all transmit blocks are zero; beta undefined')
    return rho / peak


def _round_beta(unscaled, rho):
    # A silent round (e.g. all-zero combiners) still needs a finite scaling.
    try:
        return compute_beta(unscaled, rho)
    except DegenerateInputError:
        return rho


def ls_estimate(Y, p, beta=1.0):
    """LS estimate ``Y p / (tau sqrt(beta))`` for a pilot (vector or matrix) ``p``."""
    tau = p.shape[0]
    return (Y @ p) / (tau * np.sqrt(beta))


def _noise(rng, shape, noise_power):
    if noise_power == 0:
        return np.zeros(shape, dtype=complex)
    return crandn(rng, shape, noise_power)


def round_ul_antenna(H, pilots, rho_ue, noise_power, rng):
    """Antenna-specific uplink training; returns the block and ``Hhat`` (B, K, M, N)."""
    B, K, M, N = H.shape
    tau = pilots.shape[1]
    unscaled = [pilots[k].conj().T for k in range(K)]
    beta = compute_beta(unscaled, rho_ue)
    # Y_b = sqrt(beta) sum_k H_bk P_k^H + Z_b
    Y = np.sqrt(beta) * np.einsum('bkmn,ktn->bmt', H, pilots.conj())
    Y = Y + _noise(rng, Y.shape, noise_power)
    Hhat = np.einsum('bmt,ktn->bkmn', Y, pilots) / (tau * np.sqrt(beta))
    return PilotBlock('UL', Y, beta, tx_power=beta * max(
        float(np.max(np.sum(np.abs(X) ** 2, axis=0))) for X in unscaled)), Hhat


def round_ul1(H, V, pilots, rho_ue, noise_power, rng):
    """UE-specific effective uplink training; returns the block and ``hhat`` (B, K, M)."""
    B, K, M, N = H.shape
    tau = pilots.shape[0]
    unscaled = [np.outer(V[k], pilots[:, k].conj()) for k in range(K)]
    beta = _round_beta(unscaled, rho_ue)
    h = np.einsum('bkmn,kn->bkm', H, V)
    Y = np.sqrt(beta) * np.einsum('bkm,tk->bmt', h, pilots.conj())
    Y = Y + _noise(rng, Y.shape, noise_power)
    hhat = np.einsum('bmt,tk->bkm', Y, pilots) / (tau * np.sqrt(beta))
    peak = beta * max(float(np.max(np.sum(np.abs(X) ** 2, axis=0))) for X in unscaled)
    return PilotBlock('UL-1', Y, beta, tx_power=peak), hhat


def round_ul2(H, V, weights, groups, pilots, rho_ue, noise_power, rng):
    """Group-specific effective uplink training; returns the block and ``fhat`` (B, G, M)."""
    B, K, M, N = H.shape
    tau, G = pilots.shape
    weights = np.asarray(weights, dtype=float)
    unscaled = [weights[k] * np.outer(V[k], pilots[:, groups[k]].conj()) for k in range(K)]
    beta = _round_beta(unscaled, rho_ue)
    h = np.einsum('bkmn,kn->bkm', H, V) * weights[None, :, None]
    Y = np.sqrt(beta) * np.einsum('bkm,tk->bmt', h, pilots[:, groups].conj())
    Y = Y + _noise(rng, Y.shape, noise_power)
    fhat = np.einsum('bmt,tg->bgm', Y, pilots) / (tau * np.sqrt(beta))
    peak = beta * max(float(np.max(np.sum(np.abs(X) ** 2, axis=0))) for X in unscaled)
    return PilotBlock('UL-2', Y, beta, tx_power=peak), fhat


def round_dl(H, W, groups, pilots, noise_power, rng):
    """Downlink training with precoded group pilots; returns the block and ``ghat`` (K, N)."""
    B, K, M, N = H.shape
    tau = pilots.shape[0]
    X = np.einsum('bgm,tg->bmt', W, pilots.conj())
    Y = np.einsum('bkmn,bmt->knt', H.conj(), X)
    Y = Y + _noise(rng, Y.shape, noise_power)
    ghat = np.einsum('knt,tk->kn', Y, pilots[:, groups]) / tau
    avg = np.sum(np.abs(X) ** 2, axis=(1, 2)) / tau
    return PilotBlock('DL', Y, 1.0, tx_power=float(avg.max())), ghat


def round_ul3(H, V, weights, dl_block, pilots_dl, rho_ue, noise_power, rng):
    """Over-the-air retransmission of the DL block; returns the block and ``xihat`` (B, G, M).

    The cross-term estimate reflects the precoders that produced ``dl_block``.
    """
    if dl_block is None or dl_block.role != 'DL':
        raise SequencingError('UL-3 needs the DL block of the current iteration')
    B, K, M, N = H.shape
    tau = pilots_dl.shape[0]
    weights = np.asarray(weights, dtype=float)
    Ydl = dl_block.Y
    if Ydl.shape[-1] != tau:
        raise SequencingError('DL block width does not match the DL pilot length')
    unscaled = [weights[k] * np.outer(V[k], V[k].conj() @ Ydl[k]) for k in range(K)]
    beta = _round_beta(unscaled, rho_ue)
    Y = np.sqrt(beta) * np.einsum('bkmn,knt->bmt', H, np.stack(unscaled))
    Y = Y + _noise(rng, Y.shape, noise_power)
    xihat = np.einsum('bmt,tg->bgm', Y, pilots_dl) / (tau * np.sqrt(beta))
    peak = beta * max(float(np.max(np.sum(np.abs(X) ** 2, axis=0))) for X in unscaled)
    return PilotBlock('UL-3', Y, beta, tx_power=peak), xihat
