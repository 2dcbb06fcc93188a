"""Closed-form differentials of the generalized log/exp pair.

The differential of the generalized matrix logarithm at S splits into an
eigenvector part Q + Q^T built from Moore-Penrose resolvents and a
diagonal eigenvalue part W. The same structure, with the scalar
exponential in place of the scalar logarithm, gives the differential of
the generalized exponential, which also admits an infinite-series form.

All closed forms here require a simple spectrum; a near-degenerate one
raises :class:`DegenerateSpectrum` so callers can fall back to finite
differences.
"""

import math
from typing import NamedTuple

import numpy as np

from .core import EigenDecomposition, cholesky, log_alpha, strict_lower, sym_eig
from .exceptions import DegenerateSpectrum
from .validation import check_base_vector, check_symmetric, symmetrize


def eig_gap_tol(sigma):
    """Smallest eigenvalue gap for which the closed forms are trusted."""
    return 1e-8 * max(1.0, float(np.abs(sigma).max()))


def pseudo_tol(sigma):
    """Reciprocal threshold for the Moore-Penrose resolvent (sigma_i I - S)^+."""
    return 1e-10 * float(np.abs(sigma).max())


class EigDifferentialWorkspace(NamedTuple):
    """Shared pieces of an eigen-differential: resolvent columns and projections."""

    U: np.ndarray
    sigma: np.ndarray
    V_hat: np.ndarray  # U^T V U
    D_U: np.ndarray  # column i = (sigma_i I - S)^+ V u_i


def eig_differentials(decomp: EigenDecomposition, V):
    """Eigenvector differentials of a symmetric matrix in direction V.

    Raises
    ------
    DegenerateSpectrum
        When the smallest eigenvalue gap is below tolerance.
    """
    U, sigma = decomp
    n = sigma.shape[0]
    if n > 1:
        gap = float(np.min(sigma[:-1] - sigma[1:]))
        if gap < eig_gap_tol(sigma):
            raise DegenerateSpectrum(
                f"eigenvalue gap {gap:.3e} below tolerance {eig_gap_tol(sigma):.3e}"
            )
    V_hat = U.T @ V @ U
    delta = sigma[None, :] - sigma[:, None]  # delta[j, i] = sigma_i - sigma_j
    tol = pseudo_tol(sigma) if n > 0 else 0.0
    with np.errstate(divide="ignore"):
        inv = np.where(np.abs(delta) > tol, 1.0 / delta, 0.0)
    np.fill_diagonal(inv, 0.0)
    # D_U[:, i] = sum_j u_j V_hat[j, i] / (sigma_i - sigma_j)
    D_U = U @ (inv * V_hat)
    return EigDifferentialWorkspace(U, sigma, V_hat, D_U)


def d_mlog(S, V, alpha):
    """Differential of the generalized matrix logarithm at S in direction V.

    Equals Q + Q^T + W with Q the eigenvector term and W the diagonal
    eigenvalue term scaled by 1 / (sigma_i ln a_i).
    """
    V = check_symmetric(V, tol=1e-10, name="V")
    decomp = sym_eig(S)
    alpha = check_base_vector(alpha, dim=decomp.sigma.shape[0])
    ws = eig_differentials(decomp, V)
    x = log_alpha(ws.sigma, alpha)
    Q = ws.D_U @ np.diag(x) @ ws.U.T
    w_diag = np.diag(ws.V_hat) / (ws.sigma * np.log(alpha))
    W = ws.U @ np.diag(w_diag) @ ws.U.T
    return symmetrize(Q + Q.T + W)


def d_mgexp(X, V, alpha):
    """Differential of the generalized matrix exponential at X in direction V."""
    V = check_symmetric(V, tol=1e-10, name="V")
    decomp = sym_eig(X)
    alpha = check_base_vector(alpha, dim=decomp.sigma.shape[0])
    ws = eig_differentials(decomp, V)
    lna = np.log(alpha)
    g = np.exp(lna * ws.sigma)  # a_i ** x_i
    Q = ws.D_U @ np.diag(g) @ ws.U.T
    W = ws.U @ np.diag(lna * g * np.diag(ws.V_hat)) @ ws.U.T
    return symmetrize(Q + Q.T + W)


def d_mgexp_series(X, V, alpha, order):
    """Truncated series form of :func:`d_mgexp`.

    Sums the first ``order`` terms of

        sum_k 1/k! sum_{l<k} (PX)^(k-l-1) (D_P X + P V) (PX)^l,

    where P conjugates the diagonal of log-bases into the eigenbasis of X.
    Converges to the closed form as ``order`` grows; with all bases equal
    to e it reduces to the classical series for the matrix exponential
    differential.
    """
    if order < 1:
        raise ValueError("series order must be >= 1")
    V = check_symmetric(V, tol=1e-10, name="V")
    X = check_symmetric(X, tol=1e-10, name="X")
    decomp = sym_eig(X)
    alpha = check_base_vector(alpha, dim=decomp.sigma.shape[0])
    ws = eig_differentials(decomp, V)
    B = np.diag(np.log(alpha))
    P = ws.U @ B @ ws.U.T
    D_P = ws.D_U @ B @ ws.U.T + ws.U @ B @ ws.D_U.T
    A = P @ X
    M = D_P @ X + P @ V
    # T_k = sum_{l<k} A^(k-l-1) M A^l satisfies T_{k+1} = A T_k + M A^k.
    T = M.copy()
    A_pow = A.copy()
    total = T / math.factorial(1)
    for k in range(2, order + 1):
        T = A @ T + M @ A_pow
        A_pow = A_pow @ A
        total = total + T / math.factorial(k)
    return symmetrize(total)


def d_cln(S, V):
    """Differential of the Cholesky logarithm at S in direction V.

    Composes the Cholesky-map differential L (L^-1 V L^-T)_half with the
    diagonal-log chart differential, returning a lower triangular matrix.
    """
    V = check_symmetric(V, tol=1e-10, name="V")
    L = cholesky(S)
    Linv = np.linalg.inv(L)
    Y = Linv @ V @ Linv.T
    half = strict_lower(Y) + np.diag(np.diag(Y) / 2.0)
    dL = L @ half
    return strict_lower(dL) + np.diag(np.diag(dL) / np.diag(L))


def fd_differential(f, S, V, step=1e-6):
    """Central finite-difference differential of a matrix map.

    Returns (f(S + step V) - f(S - step V)) / (2 step); the testing oracle
    against which every closed form in this module is checked.
    """
    S = np.asarray(S, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    return (f(S + step * V) - f(S - step * V)) / (2.0 * step)


def relative_error(approx, exact):
    """Frobenius error of ``approx`` scaled by max(1, ||exact||_F)."""
    exact = np.asarray(exact, dtype=np.float64)
    denom = max(1.0, float(np.linalg.norm(exact)))
    return float(np.linalg.norm(np.asarray(approx) - exact)) / denom
