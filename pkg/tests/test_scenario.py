import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfmcast.scenario import (ConfigurationError, ScenarioConfig, crandn, dbm_to_watt,
                              generate_channels, generate_topology, pathloss_db)


@pytest.mark.parametrize('d, expected', [(1, -48.0), (10, -78.0), (100, -108.0)])
def test_pathloss_values(d, expected):
    assert pathloss_db(d) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize('d', [0.0, -3.0])
def test_pathloss_rejects_nonpositive_distance(d):
    with pytest.raises(ValueError):
        pathloss_db(d)


@pytest.mark.parametrize('dbm, watt', [(30, 1.0), (0, 1e-3), (20, 0.1)])
def test_dbm_to_watt(dbm, watt):
    assert dbm_to_watt(dbm) == pytest.approx(watt, rel=1e-12)


def test_grid_geometry_corner_distance():
    cfg = ScenarioConfig.full(grid_spacing_m=100.0)
    top = generate_topology(cfg, np.random.default_rng(0))
    bs = top.bs_positions
    assert bs.shape == (25, 2)
    span = np.linalg.norm(bs.max(axis=0) - bs.min(axis=0))
    assert span == pytest.approx(400 * math.sqrt(2))
    # neighbours on the grid are one spacing apart
    d = np.linalg.norm(bs[:, None] - bs[None], axis=-1)
    assert np.min(d[d > 0]) == pytest.approx(100.0)


def test_ues_inside_extended_square():
    cfg = ScenarioConfig.desk()
    top = generate_topology(cfg, np.random.default_rng(1))
    s = cfg.grid_spacing_m
    assert np.all(top.ue_positions >= -s / 2) and np.all(top.ue_positions <= 2 * s + s / 2)
    assert np.all(top.distances >= 1.0)


def test_full_groups_of_four():
    cfg = ScenarioConfig.full()
    top = generate_topology(cfg, np.random.default_rng(2))
    assert np.bincount(top.group_of_ue).tolist() == [4] * 8


@settings(max_examples=40, deadline=None)
@given(sizes=st.lists(st.integers(1, 5), min_size=1, max_size=6), seed=st.integers(0, 2**32 - 1))
def test_partition_matches_group_sizes(sizes, seed):
    cfg = ScenarioConfig(K=sum(sizes), G=len(sizes), group_sizes=tuple(sizes))
    top = generate_topology(cfg, np.random.default_rng(seed))
    assert np.bincount(top.group_of_ue, minlength=len(sizes)).tolist() == sizes
    assert top.group_of_ue.shape == (sum(sizes),)


def test_determinism():
    cfg = ScenarioConfig.desk()
    a = generate_topology(cfg, np.random.default_rng(5))
    b = generate_topology(cfg, np.random.default_rng(5))
    for x, y in zip((a.bs_positions, a.ue_positions, a.group_of_ue, a.distances),
                    (b.bs_positions, b.ue_positions, b.group_of_ue, b.distances)):
        assert np.array_equal(x, y)
    ca = generate_channels(a, cfg, np.random.default_rng(6))
    cb = generate_channels(b, cfg, np.random.default_rng(6))
    assert np.array_equal(ca.H, cb.H)


def test_channel_entry_variance_matches_pathloss():
    cfg = ScenarioConfig(B=1, M=1, K=2, N=1, G=1, group_sizes=(2,))
    top = generate_topology(cfg, np.random.default_rng(3))
    rng = np.random.default_rng(4)
    draws = np.stack([generate_channels(top, cfg, rng).H for _ in range(100_000)])
    delta = generate_channels(top, cfg, rng).delta
    emp = np.mean(np.abs(draws) ** 2, axis=(0, 3, 4))
    np.testing.assert_allclose(emp, delta, rtol=0.02)


def test_variance_scales_linearly():
    rng = np.random.default_rng(7)
    a = crandn(rng, 200_000, 1.0)
    b = crandn(rng, 200_000, 2.0)
    assert np.mean(np.abs(b) ** 2) / np.mean(np.abs(a) ** 2) == pytest.approx(2.0, rel=0.02)


@pytest.mark.parametrize('kwargs', [
    dict(B=8),
    dict(K=7),
    dict(group_sizes=(2, 2, 2, 1)),
    dict(M=0),
    dict(rho_bs_dbm=float('inf')),
    dict(group_sizes=(4, 4, 0, 0)),
])
def test_invalid_configs(kwargs):
    with pytest.raises(ConfigurationError):
        ScenarioConfig.desk(**kwargs)
