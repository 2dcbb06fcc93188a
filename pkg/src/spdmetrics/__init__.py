"""Learnable pullback metrics and small trainable networks on SPD matrices."""

from .core import (
    EigenDecomposition,
    base_to_factors,
    cholesky,
    cln,
    cln_inv,
    mexp,
    mgexp,
    mln,
    mlog,
    mlog_order_margin,
    sym_eig,
    sym_power,
)
from .geometry import (
    AdaptiveLogEuclideanMetric,
    LogCholeskyMetric,
    LogEuclideanMetric,
    PullbackMetric,
    check_bi_invariance,
    check_exponential_invariance,
    check_similarity_invariance,
    half_unvec,
    half_vec,
    make_metric,
)
from .datasets import (
    SpdDataset,
    SyntheticSpec,
    generate_synthetic,
    train_test_split,
)
from .estimators import SpdNetClassifier, TangentSpace
from .network import NetworkConfig, init_network
from .validation import check_base_vector, check_spd, symmetrize

__version__ = "0.1.0"
