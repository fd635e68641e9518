"""Small dense linear-algebra helpers shared by the solvers."""

import numpy as np
import scipy.linalg as sla

LOAD_REL = 1e-12


class NumericalError(ArithmeticError):
    """A solve failed even after diagonal loading, or produced non-finite values."""


def herm(x):
    return np.conj(np.swapaxes(x, -1, -2))


def solve_psd(A, b, load_rel=LOAD_REL):
    """Solve ``A x = b`` for Hermitian positive (semi)definite ``A``.

    Tries a Cholesky factorization first.  If that fails, the matrix is
    diagonally loaded with ``load_rel * trace(A) / dim`` (or ``load_rel`` when
    the trace vanishes) and solved again; the second attempt falls back to LU.
    """
    A = np.asarray(A)
    try:
        return sla.cho_solve(sla.cho_factor(A, lower=True, check_finite=False), b,
                             check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError, ValueError):
        pass
    n = A.shape[0]
    scale = np.real(np.trace(A)) / n
    eps = load_rel * scale if scale > 0 else load_rel
    loaded = A + eps * np.eye(n)
    try:
        x = sla.solve(loaded, b, check_finite=False)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise NumericalError(f'singular system even after loading eps={eps:g}') from exc
    if not np.all(np.isfinite(x)):
        raise NumericalError('non-finite solution')
    return x

