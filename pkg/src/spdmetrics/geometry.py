"""Pullback geometry on the SPD manifold.

A diffeomorphism from SPD matrices onto a flat space induces, by pullback
of the Euclidean metric, a full Riemannian toolbox: distance, abelian group
and vector-space operations, exponential/logarithmic maps, parallel
transport, geodesics, and closed-form weighted Frechet means. Three
instances are provided:

``LogEuclideanMetric``
    through the matrix logarithm,
``LogCholeskyMetric``
    through the Cholesky logarithm,
``AdaptiveLogEuclideanMetric``
    through the generalized matrix logarithm with a per-eigenvalue base
    vector.

Tangent vectors are plain symmetric matrices; the base point is always an
explicit argument. Flat-image points are 1-D vectors of length n(n+1)/2.
"""

import numpy as np

from . import differentials as diff
from . import gradients as grad
from .core import (
    cln,
    cln_inv,
    mexp,
    mgexp,
    mln,
    mlog,
    strict_lower,
    sym_eig,
    sym_power,
)
from .exceptions import DegenerateSpectrum, InvalidInput
from .validation import check_base_vector, symmetrize

__all__ = [
    "half_vec",
    "half_unvec",
    "tril_vec",
    "tril_unvec",
    "PullbackMetric",
    "LogEuclideanMetric",
    "LogCholeskyMetric",
    "AdaptiveLogEuclideanMetric",
    "make_metric",
    "check_bi_invariance",
    "check_exponential_invariance",
    "check_similarity_invariance",
]


def half_vec(X):
    """Isometric half-vectorization of a symmetric matrix.

    Off-diagonal entries are scaled by sqrt(2) so the Euclidean norm of the
    image equals the Frobenius norm of the matrix. Entries follow row-major
    upper-triangle order, e.g. the 2x2 identity maps to (1, 0, 1).
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[-1]
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    return X[..., i, j] * scale


def half_unvec(v):
    """Inverse of :func:`half_vec`."""
    v = np.asarray(v, dtype=np.float64)
    m = v.shape[-1]
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise InvalidInput(f"vector length {m} is not a triangular number")
    i, j = np.triu_indices(n)
    scale = np.where(i == j, 1.0, np.sqrt(2.0))
    X = np.zeros(v.shape[:-1] + (n, n))
    X[..., i, j] = v / scale
    X[..., j, i] = X[..., i, j]
    return X


def tril_vec(X):
    """Plain entry extraction of the lower triangle, row-major.

    Lower triangular matrices carry each free entry once, so no scaling is
    needed for the Frobenius identification.
    """
    X = np.asarray(X, dtype=np.float64)
    i, j = np.tril_indices(X.shape[-1])
    return X[..., i, j]


def tril_unvec(v):
    """Inverse of :func:`tril_vec`."""
    v = np.asarray(v, dtype=np.float64)
    m = v.shape[-1]
    n = int(round((np.sqrt(8 * m + 1) - 1) / 2))
    if n * (n + 1) // 2 != m:
        raise InvalidInput(f"vector length {m} is not a triangular number")
    i, j = np.tril_indices(n)
    X = np.zeros(v.shape[:-1] + (n, n))
    X[..., i, j] = v
    return X


class PullbackMetric:
    """Geometry induced on SPD matrices by a diffeomorphism onto flat space.

    Subclasses provide the diffeomorphism bundle (``forward``, ``inverse``
    and both differentials); every Riemannian and group operation below is
    derived from it. Instances are immutable and safe to share across
    threads.
    """

    name = "abstract"

    # -- diffeomorphism bundle -------------------------------------------

    def forward(self, S):
        """Map an SPD matrix to its flat-image vector."""
        raise NotImplementedError

    def inverse(self, x):
        """Map a flat-image vector back to an SPD matrix."""
        raise NotImplementedError

    def d_forward(self, S, V):
        """Differential of ``forward`` at S applied to symmetric V."""
        raise NotImplementedError

    def d_inverse(self, x, w):
        """Differential of ``inverse`` at image point x applied to w."""
        raise NotImplementedError

    # -- derived operations ----------------------------------------------

    def identity(self, n):
        """Neutral element of the induced abelian group."""
        return self.inverse(np.zeros(n * (n + 1) // 2))

    def group_mul(self, S1, S2):
        """Induced abelian group product of two SPD matrices."""
        return self.inverse(self.forward(S1) + self.forward(S2))

    def group_inverse(self, S):
        return self.inverse(-self.forward(S))

    def scalar_mul(self, k, S):
        """Induced scalar multiplication (k = 1 is the identity map)."""
        return self.inverse(float(k) * self.forward(S))

    def inner_product(self, S1, S2):
        """Induced Hilbert-space inner product of two points."""
        return float(self.forward(S1) @ self.forward(S2))

    def distance(self, S1, S2):
        """Geodesic distance, the flat-image Euclidean distance."""
        return float(np.linalg.norm(self.forward(S1) - self.forward(S2)))

    def rie_exp(self, S, V):
        """Riemannian exponential map of tangent vector V at S."""
        return self.inverse(self.forward(S) + self.d_forward(S, V))

    def rie_log(self, S1, S2):
        """Riemannian logarithmic map of S2 at base point S1."""
        x1 = self.forward(S1)
        return self.d_inverse(x1, self.forward(S2) - x1)

    def parallel_transport(self, S1, S2, V):
        """Transport tangent vector V from S1 to S2 (a metric isometry)."""
        return self.d_inverse(self.forward(S2), self.d_forward(S1, V))

    def geodesic(self, S1, S2, t):
        """Point at parameter t on the geodesic from S1 to S2.

        Realized as the image of the straight line between the flat
        representatives, which the isometry maps to the geodesic.
        """
        x1, x2 = self.forward(S1), self.forward(S2)
        return self.inverse((1.0 - float(t)) * x1 + float(t) * x2)

    def metric_tensor(self, S, V1, V2):
        """Riemannian metric g_S(V1, V2), the pulled-back Euclidean product."""
        return float(self.d_forward(S, V1) @ self.d_forward(S, V2))

    def weighted_frechet_mean(self, points, weights=None):
        """Closed-form minimizer of the weighted sum of squared distances.

        Parameters
        ----------
        points : sequence of ndarray
            SPD matrices, at least one.
        weights : sequence of float, optional
            Positive weights; uniform when omitted.
        """
        points = list(points)
        if not points:
            raise InvalidInput("weighted_frechet_mean needs at least one point")
        if weights is None:
            weights = np.ones(len(points))
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (len(points),) or np.any(weights <= 0):
            raise InvalidInput("weights must be positive, one per point")
        weights = weights / weights.sum()
        acc = sum(w * self.forward(S) for w, S in zip(weights, points))
        return self.inverse(acc)

    def __repr__(self):
        return f"{type(self).__name__}()"


class LogEuclideanMetric(PullbackMetric):
    """Pullback of the Euclidean metric through the matrix logarithm.

    Differentials use the divided-difference kernel of the scalar log/exp,
    a deliberately separate route from the eigenvector-differential form
    used by the adaptive metric.
    """

    name = "lem"

    def forward(self, S):
        return half_vec(mln(S))

    def inverse(self, x):
        return mexp(half_unvec(x))

    def d_forward(self, S, V):
        decomp = sym_eig(S)
        return half_vec(grad.dk_apply(decomp, grad.log_spec(), symmetrize(V)))

    def d_inverse(self, x, w):
        decomp = sym_eig(half_unvec(x))
        return grad.dk_apply(decomp, grad.exp_spec(), half_unvec(w))


class LogCholeskyMetric(PullbackMetric):
    """Pullback of the Euclidean metric through the Cholesky logarithm."""

    name = "lcm"

    def forward(self, S):
        return tril_vec(cln(S))

    def inverse(self, x):
        return cln_inv(tril_unvec(x))

    def d_forward(self, S, V):
        return tril_vec(diff.d_cln(S, symmetrize(V)))

    def d_inverse(self, x, w):
        X = tril_unvec(x)
        W = tril_unvec(w)
        # Rebuild L from the chart point, push the chart tangent through the
        # exponentiated diagonal, then differentiate S = L L^T.
        dexp = np.exp(np.diag(X))
        L = strict_lower(X) + np.diag(dexp)
        dL = strict_lower(W) + np.diag(dexp * np.diag(W))
        return dL @ L.T + L @ dL.T


class AdaptiveLogEuclideanMetric(PullbackMetric):
    """Pullback metric induced by the generalized matrix logarithm.

    Parameters
    ----------
    alpha : array_like, shape (n,)
        Base vector; the metric only acts on n x n matrices. With all
        entries equal to e this coincides with the log-Euclidean metric.
    """

    name = "alem"

    def __init__(self, alpha):
        self.alpha = check_base_vector(alpha).copy()
        self.alpha.flags.writeable = False

    @property
    def dim(self):
        return self.alpha.shape[0]

    def _check_dim(self, n):
        if n != self.dim:
            raise InvalidInput(
                f"metric is bound to dimension {self.dim}, got matrix of dim {n}"
            )

    def forward(self, S):
        S = np.asarray(S, dtype=np.float64)
        self._check_dim(S.shape[-1])
        return half_vec(mlog(S, self.alpha))

    def inverse(self, x):
        X = half_unvec(x)
        self._check_dim(X.shape[-1])
        return mgexp(X, self.alpha)

    def d_forward(self, S, V):
        # The eigenvector-differential closed form needs a simple spectrum;
        # on (near-)degenerate inputs fall back to the divided-difference
        # kernel, whose coincidence branch is the exact limit.
        V = symmetrize(V)
        try:
            return half_vec(diff.d_mlog(S, V, self.alpha))
        except DegenerateSpectrum:
            weights = 1.0 / np.log(self.alpha)
            D = grad.dk_apply(sym_eig(S), grad.weighted_log_spec(weights), V)
            return half_vec(D)

    def d_inverse(self, x, w):
        X = half_unvec(x)
        W = half_unvec(w)
        try:
            return diff.d_mgexp(X, W, self.alpha)
        except DegenerateSpectrum:
            return grad.dk_apply(sym_eig(X), grad.base_power_spec(self.alpha), W)

    def __repr__(self):
        return f"AdaptiveLogEuclideanMetric(alpha={self.alpha.tolist()})"


def make_metric(name, alpha=None, dim=None):
    """Build a metric instance from a short name.

    Parameters
    ----------
    name : {"lem", "lcm", "alem"}
    alpha : array_like or float, optional
        Required for "alem". A scalar is broadcast to length ``dim``.
    dim : int, optional
        Matrix dimension, needed only to broadcast a scalar alpha.
    """
    name = name.lower()
    if name == "lem":
        return LogEuclideanMetric()
    if name == "lcm":
        return LogCholeskyMetric()
    if name == "alem":
        if alpha is None:
            raise InvalidInput("the adaptive metric needs a base vector")
        alpha = np.atleast_1d(np.asarray(alpha, dtype=np.float64))
        if alpha.size == 1:
            if dim is None:
                raise InvalidInput("scalar alpha needs an explicit dim")
            alpha = np.full(dim, float(alpha[0]))
        return AdaptiveLogEuclideanMetric(alpha)
    raise InvalidInput(f"unknown metric {name!r}")


def check_bi_invariance(metric, S1, S2, P):
    """Residual of distance invariance under group translation by P.

    Returns |d(S1 * P, S2 * P) - d(S1, S2)| where * is the induced group
    product. Zero for an exact bi-invariant realization.
    """
    d0 = metric.distance(S1, S2)
    d1 = metric.distance(metric.group_mul(S1, P), metric.group_mul(S2, P))
    return abs(d1 - d0)


def check_exponential_invariance(points, beta, alpha):
    """Residual of Frechet-mean commutation with matrix powers.

    Returns ``||FM(points)**beta - FM([S**beta])||_F`` under the adaptive
    metric with base vector ``alpha``. Matrix powers are taken through the
    eigendecomposition.
    """
    metric = AdaptiveLogEuclideanMetric(alpha)
    lhs = sym_power(metric.weighted_frechet_mean(points), beta)
    rhs = metric.weighted_frechet_mean([sym_power(S, beta) for S in points])
    return float(np.linalg.norm(lhs - rhs))


def check_similarity_invariance(S1, S2, R, s, alpha):
    """Residual of distance invariance under rotation and positive scaling.

    Returns |d(S1, S2) - d(s^2 R S1 R^T, s^2 R S2 R^T)| under the adaptive
    metric. Exact for rotations; for s != 1 exactness additionally requires
    a homogeneous base vector.
    """
    metric = AdaptiveLogEuclideanMetric(alpha)
    s2 = float(s) ** 2
    d0 = metric.distance(S1, S2)
    d1 = metric.distance(s2 * R @ S1 @ R.T, s2 * R @ S2 @ R.T)
    return abs(d1 - d0)
