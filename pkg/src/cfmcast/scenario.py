"""Network geometry, multicast group assignment and Rayleigh channel draws.

Everything returned here is in linear units: distances in meters, large-scale
coefficients and powers in watts.  dBm values only appear in
:class:`ScenarioConfig`.
"""

from dataclasses import dataclass, field, asdict, replace
import math

import numpy as np

__all__ = ['ScenarioConfig', 'Topology', 'ChannelSet', 'ConfigurationError',
           'pathloss_db', 'db_to_linear', 'dbm_to_watt', 'generate_topology',
           'generate_channels', 'crandn']

MIN_DISTANCE_M = 1.0


class ConfigurationError(ValueError):
    """Raised when a scenario or experiment configuration is inconsistent."""


@dataclass(frozen=True)
class ScenarioConfig:
    B: int = 9
    M: int = 4
    K: int = 8
    N: int = 2
    G: int = 4
    group_sizes: tuple = (2, 2, 2, 2)
    grid_spacing_m: float = 100.0
    rho_bs_dbm: float = 30.0
    rho_ue_dbm: float = 20.0
    sigma_bs_dbm: float = -95.0
    sigma_ue_dbm: float = -95.0
    pathloss_offset_db: float = -48.0
    pathloss_exponent_coeff: float = 30.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'group_sizes', tuple(int(s) for s in self.group_sizes))
        self.validate()

    def validate(self):
        for name in ('B', 'M', 'K', 'N', 'G'):
            if int(getattr(self, name)) < 1:
                raise ConfigurationError(f'{name} must be >= 1')
        if len(self.group_sizes) != self.G:
            raise ConfigurationError(
                f'group_sizes has {len(self.group_sizes)} entries, expected G={self.G}')
        if any(s < 1 for s in self.group_sizes):
            raise ConfigurationError('every multicast group needs at least one UE')
        if sum(self.group_sizes) != self.K:
            raise ConfigurationError(
                f'group sizes sum to {sum(self.group_sizes)}, expected K={self.K}')
        side = math.isqrt(self.B)
        if side * side != self.B:
            raise ConfigurationError(f'B={self.B} is not a perfect square')
        for name in ('rho_bs_dbm', 'rho_ue_dbm', 'sigma_bs_dbm', 'sigma_ue_dbm',
                     'grid_spacing_m', 'pathloss_offset_db', 'pathloss_exponent_coeff'):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f'{name} must be finite')
        if self.grid_spacing_m <= 0:
            raise ConfigurationError('grid_spacing_m must be positive')

    @classmethod
    def uniform_groups(cls, K, G, **kwargs):
        """Config with K UEs split as evenly as possible into G groups."""
        if G > K:
            raise ConfigurationError('more groups than UEs')
        sizes = [K // G + (1 if g < K % G else 0) for g in range(G)]
        return cls(K=K, G=G, group_sizes=tuple(sizes), **kwargs)

    @classmethod
    def desk(cls, **kwargs):
        """B=9, M=4, K=8, G=4 profile used for CI-scale runs."""
        base = dict(B=9, M=4, K=8, N=2, G=4, group_sizes=(2, 2, 2, 2))
        base.update(kwargs)
        return cls(**base)

    @classmethod
    def full(cls, **kwargs):
        """B=25, M=8, K=32, N=2, G=8 profile with groups of four."""
        base = dict(B=25, M=8, K=32, N=2, G=8, group_sizes=(4,) * 8)
        base.update(kwargs)
        return cls(**base)

    def with_updates(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d['group_sizes'] = list(self.group_sizes)
        return d

    @property
    def rho_bs(self):
        return dbm_to_watt(self.rho_bs_dbm)

    @property
    def rho_ue(self):
        return dbm_to_watt(self.rho_ue_dbm)

    @property
    def sigma2_bs(self):
        return dbm_to_watt(self.sigma_bs_dbm)

    @property
    def sigma2_ue(self):
        return dbm_to_watt(self.sigma_ue_dbm)


@dataclass
class Topology:
    bs_positions: np.ndarray    # (B, 2)
    ue_positions: np.ndarray    # (K, 2)
    group_of_ue: np.ndarray     # (K,) int
    distances: np.ndarray       # (B, K)
    G: int = field(default=0)

    def __post_init__(self):
        if not self.G:
            self.G = int(self.group_of_ue.max()) + 1

    def members(self, g):
        return np.flatnonzero(self.group_of_ue == g)


@dataclass
class ChannelSet:
    H: np.ndarray        # (B, K, M, N) uplink channels
    delta: np.ndarray    # (B, K) large-scale coefficients

    @property
    def shape(self):
        return self.H.shape

    def aggregated(self):
        """Stack per-BS blocks into the (K, B*M, N) aggregated channels."""
        B, K, M, N = self.H.shape
        return self.H.transpose(1, 0, 2, 3).reshape(K, B * M, N)


def pathloss_db(distance_m, offset_db=-48.0, exponent_coeff=30.0):
    """Large-scale fading in dB: ``offset - coeff * log10(d)``."""
    d = np.asarray(distance_m, dtype=float)
    if np.any(~(d > 0)):
        raise ValueError('distance must be strictly positive')
    out = offset_db - exponent_coeff * np.log10(d)
    return float(out) if out.ndim == 0 else out


def db_to_linear(x_db):
    return 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)


def dbm_to_watt(p_dbm):
    return float(10.0 ** ((p_dbm - 30.0) / 10.0))


def crandn(rng, shape, variance=1.0):
    """Circularly-symmetric complex Gaussian samples with the given variance."""
    scale = np.sqrt(np.asarray(variance, dtype=float) / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def generate_topology(config, rng):
    """Place BSs on a square grid, drop UEs uniformly, draw the group partition.

    UEs are dropped over the grid's bounding square extended by half a grid
    spacing on each side.  Group membership is a random permutation of the UE
    indices cut into consecutive blocks of ``config.group_sizes``.
    """
    config.validate()
    side = math.isqrt(config.B)
    s = config.grid_spacing_m
    xs = np.arange(side) * s
    gx, gy = np.meshgrid(xs, xs, indexing='ij')
    bs = np.column_stack([gx.ravel(), gy.ravel()])

    lo, hi = -s / 2.0, (side - 1) * s + s / 2.0
    ue = rng.uniform(lo, hi, size=(config.K, 2))

    perm = rng.permutation(config.K)
    group_of_ue = np.empty(config.K, dtype=int)
    start = 0
    for g, size in enumerate(config.group_sizes):
        group_of_ue[perm[start:start + size]] = g
        start += size

    dist = np.linalg.norm(bs[:, None, :] - ue[None, :, :], axis=-1)
    dist = np.maximum(dist, MIN_DISTANCE_M)
    return Topology(bs, ue, group_of_ue, dist, G=config.G)


def generate_channels(topology, config, rng):
    """i.i.d. Rayleigh channels with per-entry variance set by the path loss."""
    delta = db_to_linear(pathloss_db(topology.distances, config.pathloss_offset_db,
                                     config.pathloss_exponent_coeff))
    B, K = delta.shape
    H = crandn(rng, (B, K, config.M, config.N)) * np.sqrt(delta)[:, :, None, None]
    return ChannelSet(H=H, delta=delta)
