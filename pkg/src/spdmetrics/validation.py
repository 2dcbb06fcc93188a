"""Input validation helpers for matrices, batches, and base vectors.

All checks operate on plain numpy arrays so they compose with estimator
pipelines and the functional API alike.
"""

import numpy as np

from .exceptions import InvalidInput, InvalidParameter, NotPositiveDefinite

# Coordinates of a base vector must keep |ln a_i| at or above this guard so
# that the induced diagonal multiplier 1 / ln(a_i) stays bounded.
BASE_GUARD = 1e-4


def symmetrize(M):
    """Return the symmetric part (M + M^T) / 2."""
    M = np.asarray(M, dtype=np.float64)
    return (M + np.swapaxes(M, -1, -2)) / 2.0


def check_square(M, name="matrix"):
    M = np.asarray(M, dtype=np.float64)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise InvalidInput(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidInput(f"{name} contains non-finite entries")
    return M


def check_symmetric(M, tol=1e-12, name="matrix"):
    """Validate approximate symmetry, then return the exactly symmetrized array.

    Parameters
    ----------
    M : ndarray, shape (..., n, n)
    tol : float
        Maximum allowed asymmetry relative to max(1, ||M||_F).

    Returns
    -------
    ndarray
        Symmetrized copy of ``M``.
    """
    M = check_square(M, name)
    resid = np.abs(M - np.swapaxes(M, -1, -2)).max()
    scale = max(1.0, float(np.abs(M).max()))
    if resid > tol * scale:
        raise InvalidInput(f"{name} is not symmetric (residual {resid:.3e})")
    return symmetrize(M)


def spd_tolerance(S):
    """Eigenvalue floor below which a matrix is rejected as not SPD."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[-1]
    tr = np.trace(S, axis1=-2, axis2=-1)
    return 1e-12 * np.maximum(1.0, tr / n)


def repair_epsilon(S):
    """Diagonal jitter added by the repair policy."""
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[-1]
    return 1e-8 * np.trace(S, axis1=-2, axis2=-1) / n


def check_spd(S, repair=False, name="matrix"):
    """Validate that ``S`` is symmetric positive definite.

    Parameters
    ----------
    S : ndarray, shape (n, n)
    repair : bool
        When the smallest eigenvalue is at or below tolerance, add a small
        multiple of the identity instead of raising.

    Returns
    -------
    ndarray
        Symmetrized (and possibly repaired) copy of ``S``.

    Raises
    ------
    NotPositiveDefinite
        If the smallest eigenvalue is at or below tolerance and ``repair``
        is off.
    """
    S = check_symmetric(S, tol=1e-10, name=name)
    lo = float(np.linalg.eigvalsh(S)[..., 0].min())
    tol = float(np.max(spd_tolerance(S)))
    if lo <= tol:
        if not repair:
            raise NotPositiveDefinite(
                f"{name} has minimum eigenvalue {lo:.3e} (tolerance {tol:.3e})"
            )
        eps = repair_epsilon(S)
        S = S + (np.abs(lo) + eps) * np.eye(S.shape[-1])
    return S


def check_spd_batch(X, repair=False, name="X"):
    """Validate a batch of SPD matrices of shape (n_samples, n, n).

    Returns the symmetrized batch and a boolean array flagging repaired
    samples.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[-1] != X.shape[-2]:
        raise InvalidInput(f"{name} must have shape (n_samples, n, n), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput(f"{name} contains non-finite entries")
    X = check_symmetric(X, tol=1e-10, name=name)
    eig_lo = np.linalg.eigvalsh(X)[:, 0]
    tol = spd_tolerance(X)
    bad = eig_lo <= tol
    if np.any(bad):
        if not repair:
            idx = int(np.nonzero(bad)[0][0])
            raise NotPositiveDefinite(
                f"{name}[{idx}] has minimum eigenvalue {eig_lo[idx]:.3e}"
            )
        eps = repair_epsilon(X)
        bump = (np.abs(eig_lo) + eps) * bad
        X = X + bump[:, None, None] * np.eye(X.shape[-1])
    return X, bad


def check_base_vector(alpha, dim=None):
    """Validate a per-eigenvalue base vector.

    Every entry must be positive with |ln a_i| >= BASE_GUARD, which excludes
    a neighbourhood of the degenerate base 1 coordinatewise.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
    if alpha.ndim != 1:
        raise InvalidParameter(f"base vector must be 1-D, got shape {alpha.shape}")
    if dim is not None and alpha.shape[0] != dim:
        raise InvalidParameter(
            f"base vector has length {alpha.shape[0]}, expected {dim}"
        )
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise InvalidParameter("base vector entries must be finite and positive")
    if np.any(np.abs(np.log(alpha)) < BASE_GUARD):
        raise InvalidParameter(
            f"base vector entries must satisfy |ln a_i| >= {BASE_GUARD}"
        )
    return alpha


def check_orthonormal_rows(W, tol=1e-10, name="W"):
    """Validate that ``W`` has orthonormal rows (W W^T = I)."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] > W.shape[1]:
        raise InvalidParameter(
            f"{name} must be wide (rows <= columns), got shape {W.shape}"
        )
    resid = np.abs(W @ W.T - np.eye(W.shape[0])).max()
    if resid > tol:
        raise InvalidParameter(f"{name} rows are not orthonormal (residual {resid:.3e})")
    return W
