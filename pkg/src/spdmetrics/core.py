"""Scalar matrix functions on symmetric positive definite matrices.

The classic matrix logarithm/exponential pair (``mln``/``mexp``), the
Cholesky logarithm pair (``cln``/``cln_inv``), and the generalized pair
(``mlog``/``mgexp``) in which eigenvalue ``i`` is mapped through a scalar
logarithm with its own base ``a_i``.

Conventions
-----------
Eigenvalues are always sorted in descending order and base ``a_i`` pairs
with the i-th largest eigenvalue. Eigenvector signs are fixed so the first
nonzero component of each column is positive, which makes every operation
here deterministic for a given input.

With heterogeneous bases the generalized logarithm permutes the ranking of
eigenvalues whenever ``ln(sigma_i) / ln(a_i)`` is not itself descending.
On such inputs ``mgexp`` (which re-sorts) is no longer the inverse of
``mlog``. Use :func:`mlog_order_margin` to measure how far an input is from
that boundary; the round-trip laws hold on inputs with positive margin.
"""

from typing import NamedTuple

import numpy as np

from .exceptions import InvalidInput, NotPositiveDefinite
from .validation import check_base_vector, check_symmetric, symmetrize

# Exponent magnitude beyond which exp() leaves float64 range.
_EXP_LIMIT = 700.0


class EigenDecomposition(NamedTuple):
    """Orthonormal eigenvectors and descending eigenvalues of a symmetric matrix."""

    U: np.ndarray
    sigma: np.ndarray


def _fix_sign(U):
    # First component with magnitude above 1e-12 is made positive. Columns
    # are unit vectors, so a true first-nonzero always exceeds the cutoff.
    big = np.abs(U) > 1e-12
    first = np.argmax(big, axis=0)
    signs = np.sign(U[first, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def sym_eig(S):
    """Eigendecomposition of a symmetric matrix with fixed conventions.

    Parameters
    ----------
    S : ndarray, shape (n, n)
        Symmetric matrix with finite entries.

    Returns
    -------
    EigenDecomposition
        ``U`` orthogonal with sign-fixed columns, ``sigma`` descending,
        satisfying ``U @ diag(sigma) @ U.T == S``.
    """
    S = check_symmetric(S, tol=1e-10, name="S")
    vals, vecs = np.linalg.eigh(S)
    order = np.argsort(-vals, kind="stable")
    return EigenDecomposition(_fix_sign(vecs[:, order]), vals[order])


def eig_apply(S, fn):
    """Apply ``fn`` to the eigenvalues of symmetric ``S`` in its eigenbasis."""
    U, sigma = sym_eig(S)
    return symmetrize(U @ np.diag(fn(sigma)) @ U.T)


def mln(S):
    """Matrix logarithm of an SPD matrix (natural log of eigenvalues)."""
    U, sigma = sym_eig(S)
    if np.any(sigma <= 0):
        raise NotPositiveDefinite(
            f"matrix logarithm needs positive eigenvalues, got min {sigma.min():.3e}"
        )
    return symmetrize(U @ np.diag(np.log(sigma)) @ U.T)


def mexp(X):
    """Matrix exponential of a symmetric matrix. Inverse of :func:`mln`."""
    U, sigma = sym_eig(X)
    if sigma.max() > _EXP_LIMIT:
        raise OverflowError(
            f"matrix exponential overflows for eigenvalue {sigma.max():.3e}"
        )
    return symmetrize(U @ np.diag(np.exp(sigma)) @ U.T)


def cholesky(S):
    """Lower Cholesky factor of an SPD matrix.

    Raises
    ------
    NotPositiveDefinite
        If a pivot at or below zero is encountered.
    """
    S = check_symmetric(S, tol=1e-10, name="S")
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefinite(f"Cholesky failed: {err}") from err


def strict_lower(L):
    """Strictly lower triangular part."""
    return np.tril(L, k=-1)


def cln(S):
    """Cholesky logarithm: strictly lower part of L plus log of its diagonal."""
    L = cholesky(S)
    return strict_lower(L) + np.diag(np.log(np.diag(L)))


def cln_inv(X):
    """Inverse of :func:`cln`: rebuild L with exponentiated diagonal, return L L^T.

    Accepts any real lower triangular matrix.
    """
    X = np.asarray(X, dtype=np.float64)
    if np.abs(np.triu(X, k=1)).max(initial=0.0) > 0:
        raise InvalidInput("cln_inv expects a lower triangular matrix")
    d = np.diag(X)
    if d.max(initial=0.0) > _EXP_LIMIT:
        raise OverflowError("cln_inv overflows for diagonal entry > 700")
    L = strict_lower(X) + np.diag(np.exp(d))
    return L @ L.T


def log_alpha(sigma, alpha):
    """Per-index scalar logarithm log_{a_i}(sigma_i) of a value vector."""
    return np.log(sigma) / np.log(alpha)


def mlog(S, alpha):
    """Generalized matrix logarithm with a per-eigenvalue base vector.

    Parameters
    ----------
    S : ndarray, shape (n, n)
        SPD matrix.
    alpha : array_like, shape (n,)
        Base vector; entry ``a_i`` pairs with the i-th largest eigenvalue.

    Returns
    -------
    ndarray, shape (n, n)
        ``U @ diag(ln(sigma_i) / ln(a_i)) @ U.T``. Equals :func:`mln`
        when every base is e.
    """
    U, sigma = sym_eig(S)
    alpha = check_base_vector(alpha, dim=sigma.shape[0])
    if np.any(sigma <= 0):
        raise NotPositiveDefinite(
            f"mlog needs positive eigenvalues, got min {sigma.min():.3e}"
        )
    return symmetrize(U @ np.diag(log_alpha(sigma, alpha)) @ U.T)


def mgexp(X, alpha):
    """Generalized matrix exponential, inverting :func:`mlog`.

    Eigenvalue ``x_i`` of ``X`` (descending) maps to ``a_i ** x_i``. The
    inverse relation to :func:`mlog` holds on order-stable inputs, see the
    module docstring.
    """
    U, x = sym_eig(X)
    alpha = check_base_vector(alpha, dim=x.shape[0])
    expo = x * np.log(alpha)
    if expo.max() > _EXP_LIMIT:
        raise OverflowError(
            f"mgexp overflows for exponent {expo.max():.3e}"
        )
    return symmetrize(U @ np.diag(np.exp(expo)) @ U.T)


def base_to_factors(alpha):
    """Diagonal multiplier and divisor equivalent to a base vector.

    Returns
    -------
    (A, B) : pair of ndarray, shape (n,)
        ``B_i = ln(a_i)`` and ``A_i = 1 / B_i``, so that
        ``mlog(S) = U @ diag(A) @ ln(Sigma) @ U.T = U @ (ln(Sigma) / diag(B)) @ U.T``.
    """
    alpha = check_base_vector(alpha)
    B = np.log(alpha)
    return 1.0 / B, B


def mlog_order_margin(S, alpha):
    """Smallest descending gap of the log-coordinates of ``S`` under ``alpha``.

    A positive value means ``ln(sigma_i)/ln(a_i)`` is strictly descending,
    i.e. the base-to-eigenvalue pairing survives ``mgexp`` and the
    round-trip laws hold at ``S``. Gaps are normalized by the coordinate
    scale. For a 1x1 matrix the margin is infinite.
    """
    _, sigma = sym_eig(S)
    alpha = check_base_vector(alpha, dim=sigma.shape[0])
    x = log_alpha(sigma, alpha)
    if x.shape[0] < 2:
        return np.inf
    scale = max(1.0, float(np.abs(x).max()))
    return float(np.min(x[:-1] - x[1:]) / scale)


def sym_power(S, beta):
    """Matrix power ``S ** beta`` of an SPD matrix via eigendecomposition."""
    U, sigma = sym_eig(S)
    if np.any(sigma <= 0):
        raise NotPositiveDefinite("matrix power needs an SPD input")
    return symmetrize(U @ np.diag(sigma**beta) @ U.T)
