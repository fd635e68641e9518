"""Centralized alternating optimization of multicast precoders and UE combiners.

Two objectives are supported:

``sum_mse``
    weighted sum of the per-UE MSEs; precoders in closed form for given
    per-BS power duals.
``sum_group``
    sum over groups of the worst-UE MSE, written in epigraph form; the per-UE
    duals are driven by projected sub-gradient steps until the MSEs inside each
    group equalize.

The per-BS power duals follow the sign of their sub-gradient in the log
domain in both cases, so duals that differ by many orders of magnitude across
BSs (strong path-loss spread) settle in a few steps.  All functions work on
the stacked arrays described in :mod:`cfmcast.metrics`.
"""

from dataclasses import dataclass, field

import numpy as np

from ._linalg import NumericalError, herm, solve_psd
from .airlink import make_pilot_book, round_dl, round_ul_antenna
from .metrics import IterationTrace, bs_power, downlink_channels, effective_uplink, ue_mse

__all__ = ['DualState', 'CentralizedResult', 'combiner_mmse_perfect', 'combiners_mmse',
           'combiner_mmse_ls', 'combiners_from_dl', 'precoder_sum_group', 'precoder_sum_mse',
           'subgrad_update_mu', 'mirror_update_mu', 'subgrad_update_lambda', 'solve_precoders', 'run_centralized',
           'run_centralized_pilot', 'highsnr_power_alloc', 'gradient_projection_centralized',
           'project_power', 'lagrangian_gradient_aggregated']


@dataclass
class DualState:
    mu: np.ndarray                       # (K,) per-UE MSE duals
    lam: np.ndarray                      # (B,) per-BS power duals
    t: np.ndarray = None                 # (G,) epigraph values
    zeta: float = 1.0
    eta: float = 1.0
    steps: int = 0                       # sub-gradient steps taken so far (step schedule)

    def copy(self):
        return DualState(self.mu.copy(), self.lam.copy(),
                         None if self.t is None else self.t.copy(), self.zeta, self.eta,
                         self.steps)

    @classmethod
    def uniform(cls, groups, B, G=None, lam=0.0):
        groups = np.asarray(groups)
        G = int(groups.max()) + 1 if G is None else G
        sizes = np.bincount(groups, minlength=G)
        return cls(mu=1.0 / sizes[groups], lam=np.full(B, float(lam)), t=np.zeros(G))


# -- combiners ---------------------------------------------------------------

def combiner_mmse_perfect(Hk, Wagg, g, sigma2):
    """MMSE combiner of one UE from its aggregated channel ``Hk`` (BM x N).

    ``Wagg`` has the aggregated group precoders as rows, shape (G, BM).
    """
    D = Hk.conj().T @ Wagg.T            # (N, G)
    R = D @ D.conj().T + sigma2 * np.eye(Hk.shape[1])
    if not np.any(D[:, g]):
        return np.zeros(Hk.shape[1], dtype=complex)
    return solve_psd(R, D[:, g])


def combiners_mmse(H, W, groups, sigma2):
    """MMSE combiners of all UEs, shape (K, N)."""
    D = downlink_channels(H, W)          # (K, G, N)
    K, G, N = D.shape
    V = np.zeros((K, N), dtype=complex)
    for k in range(K):
        d = D[k, groups[k]]
        if not np.any(d):
            continue
        R = D[k].T @ D[k].conj() + sigma2 * np.eye(N)
        V[k] = solve_psd(R, d)
    return V


def combiner_mmse_ls(Y, p):
    """Combiner ``(Y Y^H)^{-1} Y p`` from a received DL pilot block ``Y`` (N x tau)."""
    return solve_psd(Y @ Y.conj().T, Y @ p)


def combiners_from_dl(block, pilots_dl, groups):
    Y = block.Y
    return np.stack([combiner_mmse_ls(Y[k], pilots_dl[:, groups[k]]) for k in range(Y.shape[0])])


# -- precoders ---------------------------------------------------------------

def _aggregated_solve(h, coef, lam, groups, G, M):
    """Solve (sum_k c_k h_k h_k^H + blkdiag(lam_b I)) w_g = sum_{k in g} c_k h_k."""
    B = lam.shape[0]
    hagg = h.transpose(1, 0, 2).reshape(h.shape[1], B * M)          # (K, BM)
    A = (hagg.T * coef) @ hagg.conj()
    A[np.diag_indices_from(A)] += np.repeat(lam, M)
    rhs = np.zeros((B * M, G), dtype=complex)
    np.add.at(rhs.T, groups, (coef[:, None] * hagg))
    Wagg = solve_psd(A, rhs)                                         # (BM, G)
    return Wagg.T.reshape(G, B, M).transpose(1, 0, 2)


def precoder_sum_group(H, V, mu, lam, groups, G=None):
    """Aggregated precoders for the sum-group MSE Lagrangian, shape (B, G, M)."""
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    h = effective_uplink(H, V)
    return _aggregated_solve(h, np.asarray(mu, dtype=float), np.asarray(lam, dtype=float),
                             groups, G, H.shape[2])


def precoder_sum_mse(H, V, weights, lam, groups, G=None):
    """Aggregated precoders for the weighted sum MSE Lagrangian, shape (B, G, M)."""
    return precoder_sum_group(H, V, weights, lam, groups, G)


def lagrangian_gradient_aggregated(H, W, V, coef, lam, groups):
    """Gradient of sum_k c_k MSE_k + sum_b lam_b (P_b - rho) w.r.t. each w[b, g].

    Computed from aggregated channels; returned in (B, G, M) layout.
    """
    B, K, M, N = H.shape
    G = W.shape[1]
    Hagg = H.transpose(1, 0, 2, 3).reshape(K, B * M, N)
    hagg = np.einsum('kan,kn->ka', Hagg, V)                          # (K, BM)
    Wagg = W.transpose(1, 0, 2).reshape(G, B * M)                    # (G, BM)
    grad = np.zeros((G, B * M), dtype=complex)
    for g in range(G):
        own = np.sum((coef * (groups == g))[:, None] * hagg, axis=0)
        quad = np.sum((coef * (hagg.conj() @ Wagg[g]))[:, None] * hagg, axis=0)
        grad[g] = -2.0 * (own - quad - np.repeat(lam, M) * Wagg[g])
    return grad.reshape(G, B, M).transpose(1, 0, 2)


# -- duals -------------------------------------------------------------------

def subgrad_update_mu(mu, mse, t, groups, zeta, G=None):
    """One projected sub-gradient step on the per-UE duals.

    ``zeta`` is a scalar step or one step per UE.

    Returns the new duals (normalized to sum to one in every group) and the
    epigraph values ``t_g = sum_{k in g} mu_k MSE_k``.
    """
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    t = np.asarray(t, dtype=float)
    new = np.maximum(0.0, np.asarray(mu, dtype=float) + zeta * (np.asarray(mse) - t[groups]))
    sums = np.bincount(groups, weights=new, minlength=G)
    sizes = np.bincount(groups, minlength=G)
    empty = sums <= 0
    # a group whose duals all clamp to zero restarts from uniform weights
    new = np.where(empty[groups], 1.0 / sizes[groups], new / np.where(empty, 1.0, sums)[groups])
    t_new = np.bincount(groups, weights=new * np.asarray(mse), minlength=G)
    return new, t_new


def mirror_update_mu(mu, mse, t, groups, zeta, G=None):
    """Exponentiated sub-gradient step on the per-UE duals.

    ``mu_k *= exp(zeta * (MSE_k - t_g) / t_g)`` followed by per-group
    normalization.  The relative sub-gradient makes the step independent of
    the MSE level, which spans decades between low and high SNR.  Returns the
    new duals and ``t_g = sum_{k in g} mu_k MSE_k``.
    """
    groups = np.asarray(groups)
    G = int(groups.max()) + 1 if G is None else G
    mse = np.asarray(mse, dtype=float)
    t = np.maximum(np.asarray(t, dtype=float), 1e-300)
    expo = np.clip(zeta * (mse - t[groups]) / t[groups], -50.0, 50.0)
    new = np.asarray(mu, dtype=float) * np.exp(expo)
    sums = np.bincount(groups, weights=new, minlength=G)
    sizes = np.bincount(groups, minlength=G)
    empty = sums <= 0
    new = np.where(empty[groups], 1.0 / sizes[groups], new / np.where(empty, 1.0, sums)[groups])
    # keep every dual strictly positive so a UE can regain weight later
    new = np.maximum(new, 1e-300)
    return new, np.bincount(groups, weights=new * mse, minlength=G)


def subgrad_update_lambda(lam, W, rho, eta):
    """lam_b <- max(0, lam_b + eta * (sum_g ||w_bg||^2 - rho))."""
    return np.maximum(0.0, np.asarray(lam, dtype=float) + eta * (bs_power(W) - rho))


def project_power(W, rho):
    """Scale every BS's precoders down to the power budget if they exceed it."""
    P = bs_power(W)
    a = np.where(P > rho, np.sqrt(rho / np.where(P > 0, P, 1.0)), 1.0)
    return W * a[:, None, None]


def _lambda_scale(H, V, coef):
    """Per-BS dual scale: mean diagonal of each BS block of the signal covariance."""
    h = effective_uplink(H, V)
    B, K, M = h.shape
    s = np.einsum('k,bk->b', coef, np.sum(np.abs(h) ** 2, axis=2)) / M
    fallback = s[s > 0].mean() if np.any(s > 0) else 1.0
    return np.where(s > 0, s, fallback)


def _log_lambda_step(lam, P, rho, eta, lam_floor, prev):
    """Scale-free power-dual step ``log lam += eta * log(P / rho)``.

    When the previous step gives a usable secant of ``log P`` against
    ``log lam`` the step is a secant (Newton) step instead, clipped to two
    decades.  BSs resting on the floor with slack power stay there.
    """
    logr = np.log(np.maximum(P, 1e-300) / rho)
    step = eta * logr
    if prev is not None:
        dl = np.log(lam) - prev[0]
        dp = np.log(np.maximum(P, 1e-300)) - prev[1]
        ok = (np.abs(dl) > 1e-12) & (dp * dl < 0)
        slope = np.where(ok, dp / np.where(ok, dl, 1.0), -1.0)
        step = np.where(ok, np.clip(-logr / slope, -2 * np.log(10), 2 * np.log(10)), step)
    new = np.maximum(lam_floor, lam * np.exp(step))
    rest = (lam <= lam_floor) & (logr < 0)
    new[rest] = lam_floor[rest]
    return new


def solve_precoders(H, V, groups, rho, sigma2, mode='sum_mse', weights=None, duals=None,
                    eta0=0.5, zeta0=1.0, schedule='constant', max_inner=500, tol=1e-5,
                    lambda_update='log', mu_update='log'):
    """Precoders for fixed combiners with sub-gradient dual updates.

    ``lambda_update='log'`` moves each power dual along the same sub-gradient
    sign in the log domain, ``lam_b *= (P_b / rho) ** eta0``, which is scale
    free and copes with duals spread over many orders of magnitude across
    BSs; ``'additive'`` uses :func:`subgrad_update_lambda` with the step
    normalized by the per-BS dual scale.  The per-UE duals follow
    :func:`mirror_update_mu` (``mu_update='log'``) or :func:`subgrad_update_mu`
    (``'additive'``) with step ``zeta0`` times the schedule (``'sqrt'`` for
    ``1/sqrt(i)``, or ``'constant'``).  Iterates until the KKT residuals
    (relative power excess, duality gap, dual change) drop below ``tol`` or
    ``max_inner`` steps.
    """
    if lambda_update not in ('log', 'additive'):
        raise ValueError(f'unknown lambda update {lambda_update!r}')
    if mu_update not in ('log', 'additive'):
        raise ValueError(f'unknown mu update {mu_update!r}')
    groups = np.asarray(groups)
    B, K, M, N = H.shape
    G = int(groups.max()) + 1
    w_ue = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    duals = DualState.uniform(groups, B, G) if duals is None else duals.copy()
    if mode == 'sum_mse':
        duals.mu = w_ue.copy()
    lam_ref = _lambda_scale(H, V, duals.mu)
    lam_floor = 1e-12 * lam_ref
    duals.lam = np.where(duals.lam > 0, duals.lam, lam_ref)
    prev = None                          # (log lam, log P) of the last step, for secants
    n_done = 0
    for i in range(1, max_inner + 1):
        # the decaying schedule continues across calls that warm start from ``duals``
        step = 1.0 / np.sqrt(duals.steps + i) if schedule == 'sqrt' else 1.0
        W = precoder_sum_group(H, V, duals.mu, duals.lam, groups, G)
        P = bs_power(W)
        # KKT residuals: relative infeasibility, and the duality gap lam_b |rho - P_b|
        # which is in objective (MSE) units
        change = max(float(np.max(P / rho - 1.0)), float(np.max(duals.lam * np.abs(rho - P))))
        if lambda_update == 'log':
            lam_new = _log_lambda_step(duals.lam, P, rho, eta0, lam_floor, prev)
            prev = (np.log(duals.lam), np.log(np.maximum(P, 1e-300)))
        else:
            lam_new = np.maximum(0.0, duals.lam + eta0 * step * lam_ref * (P / rho - 1.0))
        if mode == 'sum_group':
            mse = ue_mse(H, W, V, groups, sigma2)
            if duals.t is None or not np.any(duals.t):
                duals.t = np.bincount(groups, weights=duals.mu * mse, minlength=G)
            if mu_update == 'log':
                mu_new, duals.t = mirror_update_mu(duals.mu, mse, duals.t, groups,
                                                   zeta0 * step, G)
            else:
                mu_new, duals.t = subgrad_update_mu(duals.mu, mse, duals.t, groups,
                                                    zeta0 * step, G)
            change = max(change, float(np.max(np.abs(mu_new - duals.mu))))
            duals.mu = mu_new
        n_done = i
        if change < tol:
            break
        duals.lam = lam_new
    W = precoder_sum_group(H, V, duals.mu, duals.lam, groups, G)
    if not np.all(np.isfinite(W)):
        raise NumericalError('non-finite precoders in dual iterations')
    duals.eta, duals.zeta = eta0, zeta0
    duals.steps += n_done
    return project_power(W, rho), duals, n_done


@dataclass
class CentralizedResult:
    W: np.ndarray
    V: np.ndarray
    duals: DualState
    trace: IterationTrace = field(default_factory=IterationTrace)
    inner_iterations: list = field(default_factory=list)
    converged: bool = False


def run_centralized(H, groups, rho, sigma2_ue, V0, mode='sum_mse', weights=None,
                    max_outer=200, tol=1e-6, H_true=None, inner_tol=1e-5, **inner):
    """Alternating optimization: precoders for fixed combiners, then MMSE combiners.

    ``H`` is the channel used for optimization (true or estimated); the trace
    is evaluated on ``H_true`` (defaults to ``H``).  Terminates when the
    relative change of the objective falls below ``tol``.  ``inner_tol`` and
    the remaining keywords go to :func:`solve_precoders`.
    """
    groups = np.asarray(groups)
    H_eval = H if H_true is None else H_true
    K = H.shape[1]
    w_ue = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    V = np.array(V0, dtype=complex)
    duals = None
    res = CentralizedResult(W=None, V=V, duals=None)
    prev = None
    for _ in range(max_outer):
        W, duals, n_inner = solve_precoders(H, V, groups, rho, sigma2_ue, mode, w_ue, duals,
                                            tol=inner_tol, **inner)
        V = combiners_mmse(H, W, groups, sigma2_ue)
        mse = ue_mse(H, W, V, groups, sigma2_ue)
        if mode == 'sum_group':
            G = W.shape[1]
            obj = float(sum(mse[groups == g].max() for g in range(G)))
        else:
            obj = float(np.dot(w_ue, mse))
        if not np.isfinite(obj):
            raise NumericalError('objective diverged in centralized alternating optimization')
        res.trace.record(H_eval, W, V, groups, sigma2_ue, w_ue, objective=obj)
        res.inner_iterations.append(n_inner)
        if prev is not None and abs(prev - obj) <= tol * abs(prev):
            res.converged = True
            break
        prev = obj
    res.W, res.V, res.duals = W, V, duals
    return res


def run_centralized_pilot(H, groups, rho_bs, rho_ue, sigma2_bs, sigma2_ue, V0, rng,
                          pilots=None, mode='sum_mse', **kwargs):
    """Centralized reference with one antenna-specific UL estimate and a final DL round.

    Precoders are optimized on the LS channel estimates; each UE then derives
    its combiner from a single DL pilot block.
    """
    B, K, M, N = H.shape
    G = int(np.max(groups)) + 1
    pilots = make_pilot_book(K, N, G) if pilots is None else pilots
    ul_block, Hhat = round_ul_antenna(H, pilots.ul_antenna, rho_ue, sigma2_bs, rng)
    res = run_centralized(Hhat, groups, rho_bs, sigma2_ue, V0, mode=mode, H_true=H, **kwargs)
    dl_block, _ = round_dl(H, res.W, groups, pilots.dl, sigma2_ue, rng)
    res.V = combiners_from_dl(dl_block, pilots.dl, groups)
    res.trace = IterationTrace()
    res.trace.record(H, res.W, res.V, groups, sigma2_ue)
    res.blocks = {'UL': ul_block, 'DL': dl_block}
    return res


# -- gradient projection (centralized form) -----------------------------------

def gradient_projection_centralized(H, groups, rho, sigma2_ue, V0, alpha, iterations,
                                    weights=None, W0=None):
    """Gradient steps on the aggregated precoders followed by per-BS projection.

    Combiners are refreshed with the MMSE rule after every precoder update.
    Returns the list of precoder iterates.
    """
    groups = np.asarray(groups)
    B, K, M, N = H.shape
    G = int(groups.max()) + 1
    w_ue = np.ones(K) if weights is None else np.asarray(weights, dtype=float)
    W = np.zeros((B, G, M), dtype=complex) if W0 is None else np.array(W0, dtype=complex)
    V = np.array(V0, dtype=complex)
    out = []
    for _ in range(iterations):
        grad = lagrangian_gradient_aggregated(H, W, V, w_ue, np.zeros(B), groups)
        W = project_power(W - alpha * grad, rho)
        V = combiners_mmse(H, W, groups, sigma2_ue)
        out.append(W.copy())
    return out, V


# -- high-SNR power allocation -------------------------------------------------

def highsnr_power_alloc(c, groups, sigma2, rho):
    """Group powers minimizing ``sum_k sigma2 / (p_{g_k} c_k^2)`` s.t. ``sum_g p_g <= rho``.

    Returns ``(p, kappa)`` with ``p_g = rho u_g / sum u`` and
    ``u_g = sqrt(sum_{k in g} sigma2 / c_k^2)``; ``kappa`` is the multiplier of
    the power constraint.
    """
    c = np.abs(np.asarray(c, dtype=complex))
    if np.any(c == 0):
        raise ValueError('effective gains must be non-zero')
    groups = np.asarray(groups)
    G = int(groups.max()) + 1
    u = np.sqrt(np.bincount(groups, weights=sigma2 / c ** 2, minlength=G))
    p = rho * u / u.sum()
    kappa = u.sum() ** 2 / rho ** 2
    return p, kappa
