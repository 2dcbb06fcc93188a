"""Backpropagation through structured matrix operations.

Gradients of eigenvalue functions flow through the Loewner matrix of
divided differences (the Daleckii-Krein kernel); the same kernel gives the
forward differential, so one code path serves both directions. The module
also carries the layer primitives of the SPD network (bilinear map,
eigenvalue rectification, adaptive logarithm) and the two manifold
parameter updates: QR-retracted SGD on matrices with orthonormal rows and
multiplicative RSGD on positive scalars.

Everything operates on plain arrays and is pure; batch reduction order is
left to the caller so results stay bitwise deterministic.
"""

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EigenDecomposition, mexp, sym_eig, sym_power
from .exceptions import InvalidParameter
from .validation import check_orthonormal_rows, symmetrize

# Self-test hook used by `spdmetrics check-grad --inject-fault` to verify
# that the finite-difference harness actually detects broken kernels.
_FAULT = None


def set_fault_injection(name):
    global _FAULT
    if name not in (None, "loewner-sign"):
        raise ValueError(f"unknown fault {name!r}")
    _FAULT = name


def dd_tol(sigma):
    """Gap below which the divided difference falls back to the derivative."""
    return 1e-10 * max(1.0, float(np.abs(sigma).max()))


@dataclass(frozen=True)
class ScalarFunctionSpec:
    """A scalar map applied per eigenvalue index, with its derivative.

    ``f`` and ``f_prime`` take the full eigenvalue vector and return the
    vector of per-index values, which allows index-dependent weights.
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    f_prime: Callable[[np.ndarray], np.ndarray]


def log_spec():
    return ScalarFunctionSpec("log", np.log, lambda s: 1.0 / s)


def exp_spec():
    return ScalarFunctionSpec("exp", np.exp, np.exp)


def identity_spec():
    return ScalarFunctionSpec("identity", lambda s: s, np.ones_like)


def weighted_log_spec(weights):
    """Per-index map sigma_i -> w_i ln(sigma_i)."""
    w = np.asarray(weights, dtype=np.float64)
    return ScalarFunctionSpec(
        "weighted-log", lambda s: w * np.log(s), lambda s: w / s
    )


def base_power_spec(alpha):
    """Per-index map x_i -> a_i ** x_i with derivative ln(a_i) a_i ** x_i."""
    lna = np.log(np.asarray(alpha, dtype=np.float64))
    return ScalarFunctionSpec(
        "base-power",
        lambda x: np.exp(lna * x),
        lambda x: lna * np.exp(lna * x),
    )


def reeig_clamp_spec(eps):
    """Eigenvalue rectifier max(sigma, eps) with subgradient 0 at the kink."""
    return ScalarFunctionSpec(
        "reeig-clamp",
        lambda s: np.maximum(s, eps),
        lambda s: (s > eps).astype(np.float64),
    )


def loewner(sigma, spec):
    """Loewner matrix of divided differences of ``spec`` over eigenvalue pairs.

    K[i, j] = (f_i(sigma_i) - f_j(sigma_j)) / (sigma_i - sigma_j) when the
    gap exceeds tolerance, else f'(sigma_i). The diagonal is always the
    derivative.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    fv = spec.f(sigma)
    fp = spec.f_prime(sigma)
    delta = sigma[:, None] - sigma[None, :]
    close = np.abs(delta) <= dd_tol(sigma)
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.where(close, fp[:, None], (fv[:, None] - fv[None, :]) / delta)
    if _FAULT == "loewner-sign":
        K = -K
    return K


def dk_apply(decomp: EigenDecomposition, spec, M):
    """Daleckii-Krein map U [K o (U^T M U)] U^T for symmetric M.

    The map is self-adjoint, so it is both the forward differential of the
    eigenvalue function and the adjoint used in backpropagation.
    """
    U, sigma = decomp
    K = loewner(sigma, spec)
    return symmetrize(U @ (K * (U.T @ M @ U)) @ U.T)


def eig_fn_backward(decomp: EigenDecomposition, spec, grad_out):
    """Gradient w.r.t. the SPD input of X = U f(Sigma) U^T."""
    return dk_apply(decomp, spec, symmetrize(grad_out))


def alog_backward(S, factors, grad_out):
    """Gradients of the adaptive-logarithm layer X = U diag(A) ln(Sigma) U^T.

    Parameters
    ----------
    S : ndarray or EigenDecomposition
        Layer input (or its cached decomposition).
    factors : ndarray, shape (n,)
        Diagonal multiplier A applied to the log-eigenvalues.
    grad_out : ndarray, shape (n, n)
        Upstream gradient w.r.t. X.

    Returns
    -------
    (grad_S, grad_A)
        Input gradient via the weighted-log kernel and the diagonal of
        [U^T grad_out U] o ln(Sigma).
    """
    decomp = S if isinstance(S, EigenDecomposition) else sym_eig(S)
    factors = np.asarray(factors, dtype=np.float64)
    G = symmetrize(grad_out)
    grad_S = dk_apply(decomp, weighted_log_spec(factors), G)
    U, sigma = decomp
    grad_A = np.diag(U.T @ G @ U) * np.log(sigma)
    return grad_S, grad_A


def bimap_forward(W, S):
    """Bilinear layer W S W^T with semi-orthogonal W (orthonormal rows)."""
    W = check_orthonormal_rows(W)
    return W @ S @ W.T


def bimap_backward(W, S, grad_out):
    """Euclidean gradients of the bilinear layer.

    Assumes a symmetric upstream gradient (asymmetric ones are symmetrized
    first, which is exact on the symmetric subspace the layer lives in).
    """
    G = symmetrize(grad_out)
    grad_S = W.T @ G @ W
    grad_W = 2.0 * G @ W @ S
    return grad_W, grad_S


def qr_orthonormal_rows(M):
    """Orthonormal-rows factor of M via thin QR of M^T, sign-fixed.

    The sign fix (positive R diagonal) makes the factor unique, so a matrix
    that already has orthonormal rows is returned unchanged.
    """
    Q, R = np.linalg.qr(M.T)
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return (Q * signs).T


def stiefel_update(W, grad_W, lr):
    """One Riemannian SGD step on the manifold of orthonormal-row matrices.

    Projects the Euclidean gradient to the tangent space, steps, and
    retracts by QR, so the output rows are orthonormal to working
    precision.
    """
    riem = grad_W - W @ grad_W.T @ W
    return qr_orthonormal_rows(W - lr * riem)


def reeig_forward(S, eps):
    """Eigenvalue rectification U max(Sigma, eps) U^T.

    Returns the rectified matrix together with the input decomposition for
    reuse in the backward pass.
    """
    decomp = sym_eig(S)
    out = symmetrize(
        decomp.U @ np.diag(np.maximum(decomp.sigma, eps)) @ decomp.U.T
    )
    return out, decomp


def reeig_backward(decomp, eps, grad_out):
    """Gradient of the rectifier through the clamp kernel."""
    return eig_fn_backward(decomp, reeig_clamp_spec(eps), grad_out)


def rsgd_positive_scalar(a, grad_a, lr):
    """Multiplicative RSGD update a <- a * exp(-lr * a * grad).

    Treats a positive scalar as a point of the 1-D SPD manifold, so
    positivity is preserved for any finite gradient. Works elementwise on
    arrays. The exponent is clamped at magnitude 50 with a warning.
    """
    a = np.asarray(a, dtype=np.float64)
    expo = -lr * a * np.asarray(grad_a, dtype=np.float64)
    if np.any(np.abs(expo) > 50.0):
        warnings.warn("rsgd exponent clamped at magnitude 50", RuntimeWarning)
        expo = np.clip(expo, -50.0, 50.0)
    return a * np.exp(expo)


def spd_rsgd_step(S, euclid_grad, lr):
    """RSGD step on the SPD manifold: project, then exponential-map back.

    The tangent step is V = -lr * S sym(grad) S and the retraction is the
    exact exponential S^1/2 expm(S^-1/2 V S^-1/2) S^1/2. The 1x1 case
    reproduces :func:`rsgd_positive_scalar` exactly.
    """
    V = -lr * S @ symmetrize(euclid_grad) @ S
    R = sym_power(S, 0.5)
    R_inv = sym_power(S, -0.5)
    return symmetrize(R @ mexp(symmetrize(R_inv @ V @ R_inv)) @ R)


def geom_equals_div_check(a0, grads, lr):
    """Trajectory gap between multiplicative RSGD on a base and SGD on its log.

    Runs the base update with chained gradients grad_a = g / a and the
    Euclidean update b <- b - lr g from b0 = ln(a0); returns
    max_t |ln(a_t) - b_t| over the whole trajectory, which is zero up to
    rounding.
    """
    a = float(a0)
    if a <= 0:
        raise InvalidParameter("initial base must be positive")
    b = np.log(a)
    worst = abs(np.log(a) - b)
    for g in np.asarray(grads, dtype=np.float64).ravel():
        a = float(rsgd_positive_scalar(a, g / a, lr))
        b = b - lr * g
        worst = max(worst, abs(np.log(a) - b))
    return worst
