"""Shared samplers and independent oracles for the test suite."""

import numpy as np
import pytest

from spdmetrics.geometry import half_unvec, half_vec


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_sym(rng, n, scale=1.0):
    A = rng.standard_normal((n, n)) * scale
    return (A + A.T) / 2.0


def rand_rotation(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    Q = Q * np.sign(np.diag(R))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def rand_spd(rng, n, log_range=(-1.0, 1.0)):
    Q = rand_rotation(rng, n)
    eig = np.exp(rng.uniform(*log_range, n))
    S = (Q * eig) @ Q.T
    return (S + S.T) / 2.0


def narrow_alpha(rng, n, band=(0.9, 1.1)):
    """Heterogeneous base vector whose logs stay in a narrow positive band.

    Within the band, coordinate sequences with ratio gaps wider than the
    band ratio keep their ordering after multiplication or division by the
    logs, which is what keeps the adaptive operators on their invertible
    domain (see ``gapped_coords``).
    """
    return np.exp(rng.uniform(*band, n))


def gapped_coords(rng, n, ratio=1.4, start=(0.05, 0.15)):
    """Descending positive coordinates with pairwise ratios >= ``ratio``.

    Positive combinations of such sequences keep the ratio gaps (mediant
    inequality), so sums, convex means, and sign flips of the flat images
    built from them stay order-stable under a narrow-band base vector.
    """
    x = np.empty(n)
    x[-1] = rng.uniform(*start)
    for i in range(n - 2, -1, -1):
        x[i] = x[i + 1] * ratio * rng.uniform(1.0, 1.2)
    return x


def stable_point(rng, n, alpha, U=None, ratio=1.4):
    """SPD matrix whose log-coordinates under ``alpha`` are order-stable."""
    from spdmetrics.core import mgexp

    if U is None:
        U = rand_rotation(rng, n)
    x = gapped_coords(rng, n, ratio=ratio)
    return mgexp((U * x) @ U.T, alpha)


def stable_family(rng, n, count, alpha, share_basis=True):
    """SPD matrices jointly order-stable under ``alpha``.

    With a shared eigenbasis every group combination of the family stays
    stable, which matches the domain on which the adaptive group structure
    is exactly realized.
    """
    U = rand_rotation(rng, n) if share_basis else None
    return [
        stable_point(rng, n, alpha, U=U if share_basis else rand_rotation(rng, n))
        for _ in range(count)
    ]


def image_order_stable(Z, alpha, margin=0.01):
    """True when the flat-image point Z round-trips through the adaptive maps.

    The pairing chosen by the generalized exponential survives the outer
    logarithm iff ln(a_i) z_i stays descending over Z's descending
    eigenvalues; checked a priori, without evaluating the maps.
    """
    from spdmetrics.core import sym_eig

    _, z = sym_eig(Z)
    if z.shape[0] < 2:
        return True
    prod = np.log(alpha) * z
    gap = np.min(prod[:-1] - prod[1:]) / max(1.0, np.abs(prod).max())
    return gap > margin


def stable_group_triple(rng, n, alpha, max_tries=50):
    """Non-commuting SPD triple whose pairwise group products stay in-domain."""
    from spdmetrics.core import mgexp

    for _ in range(max_tries):
        Xs = []
        for _ in range(3):
            U = rand_rotation(rng, n)
            Xs.append((U * gapped_coords(rng, n, ratio=1.6)) @ U.T)
        X1, X2, XP = Xs
        candidates = (X1, X2, XP, X1 + XP, X2 + XP)
        if all(image_order_stable(Z, alpha) for Z in candidates):
            return tuple(mgexp(Z, alpha) for Z in (X1, X2, XP))
    raise RuntimeError("no stable triple found")


def mlog_stable_pair(rng, n):
    """(S, alpha) stable in the forward direction, usable at any dimension.

    Ascending base logs with descending positive eigenvalue logs keep the
    log-coordinates descending without multiplicative growth, so this
    construction scales to large n where ratio-gapped spectra would
    overflow.
    """
    lna = np.sort(rng.uniform(0.7, 1.4, n))
    lns = np.sort(rng.uniform(0.1, 3.0, n))[::-1] + np.linspace(0.15 * n, 0.0, n)
    Q = rand_rotation(rng, n)
    S = (Q * np.exp(lns)) @ Q.T
    return (S + S.T) / 2.0, np.exp(lna)


def frechet_gd_oracle(metric, points, weights=None, iters=1000, fd_step=1e-6):
    """Projected gradient descent on the weighted squared-distance functional.

    Works in half-vectorized matrix coordinates with central finite
    differences, entirely independent of the closed-form mean. Step size
    is 0.1 / sum(weights).
    """
    if weights is None:
        weights = np.ones(len(points))
    weights = np.asarray(weights, dtype=np.float64)

    def objective(v):
        M = half_unvec(v)
        M = spd_floor(M)
        return sum(
            w * metric.distance(M, S) ** 2 for w, S in zip(weights, points)
        )

    def spd_floor(M, floor=1e-10):
        vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
        return (vecs * np.maximum(vals, floor)) @ vecs.T

    v = half_vec(sum(points) / len(points))
    step = 0.1 / weights.sum()
    m = v.shape[0]
    for _ in range(iters):
        g = np.empty(m)
        for k in range(m):
            e = np.zeros(m)
            e[k] = fd_step
            g[k] = (objective(v + e) - objective(v - e)) / (2 * fd_step)
        v = v - step * g
    return spd_floor(half_unvec(v))


# ------------------------------------------------------------------ report

_CRITERION_PREFIX = "test_acceptance.py::test_criterion_"


def pytest_terminal_summary(terminalreporter):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if _CRITERION_PREFIX not in nodeid:
                continue
            tail = nodeid.split("test_criterion_", 1)[1]
            num, _, label = tail.partition("_")
            label = label.replace("_", " ")
            status = "PASS" if outcome == "passed" else "FAIL"
            lines.append((int(num), f"ACCEPTANCE CRITERION {int(num)} ({label}): {status}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
