"""Fast invariant suite behind ``cfmcast check``.

Each check returns ``(passed, detail)``; :func:`run_all` runs them in order.
The full, slower suite lives in the test directory.
"""

import numpy as np

from .airlink import make_pilot_book, round_dl, round_ul1, round_ul2, round_ul3
from .centralized import (gradient_projection_centralized, highsnr_power_alloc,
                          run_centralized)
from .distributed import (StepConfig, br_delta_perfect, br_delta_pilot, brgs_delta_perfect,
                          gb_gradient_perfect, gb_gradient_pilot, lagrangian_gradient,
                          run_bidirectional)
from .metrics import pilot_overhead, ue_mse
from .scenario import ScenarioConfig, crandn, generate_channels, generate_topology

__all__ = ['run_all', 'CHECKS']


def _instance(rng, B=4, M=4, K=6, N=2, G=3):
    H = crandn(rng, (B, K, M, N))
    groups = np.arange(K) % G
    V = crandn(rng, (K, N))
    W = crandn(rng, (B, G, M), 0.1)
    return H, groups, V, W


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def check_pilot_limits(rng):
    H, groups, V, W = _instance(rng)
    B, K, M, N = H.shape
    G = W.shape[1]
    w = np.ones(K)
    pb = make_pilot_book(K, N, G)
    b1, _ = round_ul1(H, V, pb.ul1, 1.0, 0.0, rng)
    b2, _ = round_ul2(H, V, w, groups, pb.ul2, 1.0, 0.0, rng)
    dl, _ = round_dl(H, W, groups, pb.dl, 0.0, rng)
    b3, _ = round_ul3(H, V, w, dl, pb.dl, 1.0, 0.0, rng)
    lam = np.full(B, 0.7)
    err = _rel(np.stack([br_delta_pilot(b1.Y[b], b3.Y[b], pb.ul1, pb.dl, w, groups, 0.7,
                                        b1.beta, b3.beta, 0.0, W[b]) for b in range(B)]),
               br_delta_perfect(H, V, w, groups, lam, W))
    err = max(err, _rel(np.stack([gb_gradient_pilot(b2.Y[b], b3.Y[b], pb.ul2, pb.dl, b2.beta,
                                                    b3.beta) for b in range(B)]),
                        gb_gradient_perfect(H, V, w, groups, W)))
    return err <= 1e-8, f'max relative error {err:.2e}'


def check_gradient(rng):
    H, groups, V, W = _instance(rng, B=2, M=3, K=4, G=2)
    w = rng.uniform(0.5, 2.0, H.shape[1])
    f = lambda X: float(np.dot(w, ue_mse(H, X, V, groups, 0.3)))
    g = gb_gradient_perfect(H, V, w, groups, W)
    num = np.zeros_like(W)
    h = 1e-6
    for idx in np.ndindex(W.shape):
        for unit in (1.0, 1j):
            E = np.zeros_like(W)
            E[idx] = h * unit
            d = (f(W + E) - f(W - E)) / (2 * h)
            num[idx] += d * unit
    err = _rel(g, num)
    return err <= 1e-5, f'relative error {err:.2e}'


def check_gb_equivalence(rng):
    H, groups, V, _ = _instance(rng)
    steps = StepConfig(gb_step=0.3, schedule='constant')
    res = run_bidirectional('GB', H, groups, 1.0, 1.0, 0.0, 0.1, V, 50, 'perfect', rng,
                            steps=steps)
    Ws, _ = gradient_projection_centralized(H, groups, 1.0, 0.1, V, 0.3, 50)
    err = max(np.max(np.abs(a - b)) for a, b in zip(res.iterates, Ws))
    return err <= 1e-9, f'max elementwise difference {err:.2e}'


def check_descent(rng):
    worst = np.inf
    for _ in range(20):
        H, groups, V, W = _instance(rng, B=2, M=3, K=4, G=2)
        lam = rng.uniform(0.01, 1.0, 2)
        grad = lagrangian_gradient(H, V, np.ones(4), groups, W, lam)
        for d in (br_delta_perfect(H, V, np.ones(4), groups, lam, W),
                  brgs_delta_perfect(H, V, groups, lam, W)):
            worst = min(worst, float(np.real(np.vdot(grad, d))))
    return worst >= -1e-10, f'min Re<grad, delta> {worst:.2e}'


def check_power_alloc(rng):
    c = rng.uniform(0.1, 2.0, 6)
    groups = np.array([0, 0, 1, 1, 2, 2])
    p, kappa = highsnr_power_alloc(c, groups, 0.5, 3.0)
    u2 = np.bincount(groups, weights=0.5 / c ** 2)
    err = max(abs(p.sum() - 3.0), float(np.max(np.abs(kappa * p ** 2 - u2))))
    return err <= 1e-12, f'max residual {err:.2e}'


def check_overhead(rng):
    rows = {'Centralized': 72, 'LocalMMSE': 400, 'LocalMF': 160, 'BR': 480, 'BR-GS': 240,
            'GB': 240}
    bad = [a for a, v in rows.items() if pilot_overhead(a, 32, 8, 2, 10).total != v]
    return not bad, 'all rows match' if not bad else f'mismatch: {bad}'


def check_feasibility(rng):
    cfg = ScenarioConfig.desk()
    top = generate_topology(cfg, rng)
    ch = generate_channels(top, cfg, rng)
    V0 = crandn(rng, (cfg.K, cfg.N))
    worst = 0.0
    for a in ('GB', 'BR', 'BR-GS', 'LocalMMSE', 'LocalMF'):
        res = run_bidirectional(a, ch.H, top.group_of_ue, cfg.rho_bs, cfg.rho_ue, cfg.sigma2_bs,
                                cfg.sigma2_ue, V0, 5, 'pilot', rng)
        worst = max(worst, max(p.max() for p in res.trace.bs_power) / cfg.rho_bs,
                    max(res.ue_tx_power) / cfg.rho_ue)
    return worst <= 1 + 1e-9, f'max power / budget {worst:.12f}'


def check_alternating_descent(rng):
    H, groups, V, _ = _instance(rng, B=2, M=3, K=4, G=2)
    res = run_centralized(H, groups, 1.0, 0.1, V, max_outer=15)
    obj = np.array(res.trace.objective)
    ok = bool(np.all(np.diff(obj) <= 1e-9 * obj[:-1]))
    return ok, f'objective {obj[0]:.4f} -> {obj[-1]:.4f}'


CHECKS = [
    ('pilot-based forms match perfect CSI at zero noise', check_pilot_limits),
    ('sum-MSE gradient matches finite differences', check_gradient),
    ('distributed GB equals centralized gradient projection', check_gb_equivalence),
    ('BR and BR-GS directions are descent directions', check_descent),
    ('high-SNR power allocation satisfies its optimality conditions', check_power_alloc),
    ('pilot overhead accounting', check_overhead),
    ('per-BS and per-UE power budgets hold', check_feasibility),
    ('centralized alternating optimization descends', check_alternating_descent),
]


def run_all(seed=0, out=print):
    """Run every check; prints one line each and returns True when all pass."""
    ok = True
    for i, (name, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, i])
        try:
            passed, detail = fn(rng)
        except Exception as exc:             # a crash counts as a failure
            passed, detail = False, f'{type(exc).__name__}: {exc}'
        out(f'[{"PASS" if passed else "FAIL"}] {name}: {detail}')
        ok &= passed
    return ok
