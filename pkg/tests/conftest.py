import numpy as np
import pytest

from cfmcast.scenario import crandn


def random_instance(rng, B=2, M=3, K=4, N=2, G=2, weights=False):
    """Unit-scale random instance: channels, round-robin groups, combiners, precoders."""
    H = crandn(rng, (B, K, M, N))
    groups = np.arange(K) % G
    V = crandn(rng, (K, N))
    W = crandn(rng, (B, G, M), 0.2)
    w = rng.uniform(0.5, 2.0, K) if weights else np.ones(K)
    return H, groups, V, W, w


def rel_err(a, b):
    return float(np.linalg.norm(np.ravel(a - b)) / max(np.linalg.norm(np.ravel(b)), 1e-300))


def numeric_gradient(f, W, h=1e-6):
    """Central-difference Wirtinger-style gradient: d/dRe + j d/dIm per entry."""
    out = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        for unit in (1.0, 1j):
            E = np.zeros_like(W)
            E[idx] = h * unit
            out[idx] += unit * (f(W + E) - f(W - E)) / (2 * h)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# -- acceptance verdicts ----------------------------------------------------------

VERDICTS = []


@pytest.fixture
def verdict():
    """``verdict(number, passed, detail)`` records one criterion line and asserts it."""
    def record(number, passed, detail):
        line = f'[{"PASS" if passed else "FAIL"}] criterion {number}: {detail}'
        VERDICTS.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section('acceptance criteria')
        for line in VERDICTS:
            terminalreporter.write_line(line)
