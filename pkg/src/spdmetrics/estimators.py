"""Scikit-learn compatible estimators wrapping the functional API.

``TangentSpace`` turns batches of SPD matrices into flat Euclidean
features through a chosen pullback metric, so any downstream sklearn
model can consume them. ``SpdNetClassifier`` trains the full manifold
network with fit/predict semantics.
"""

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import network as net
from .datasets import SpdDataset
from .exceptions import InvalidInput
from .geometry import make_metric
from .validation import check_spd_batch


class TangentSpace(BaseEstimator, TransformerMixin):
    """Flat-image embedding of SPD matrices under a pullback metric.

    Parameters
    ----------
    metric : {"lem", "lcm", "alem"}
        Which diffeomorphism induces the embedding.
    alpha : float or array_like, optional
        Base vector for the adaptive metric; a scalar is broadcast to the
        matrix dimension seen in ``fit``.

    Notes
    -----
    Euclidean distances between transformed feature vectors equal the
    geodesic distances between the original matrices.
    """

    def __init__(self, metric="lem", alpha=None):
        self.metric = metric
        self.alpha = alpha

    def fit(self, X, y=None):
        X, _ = check_spd_batch(X)
        self.dim_ = X.shape[-1]
        self.metric_ = make_metric(self.metric, alpha=self.alpha, dim=self.dim_)
        self.n_features_in_ = self.dim_ * self.dim_
        return self

    def _check_fitted(self):
        if not hasattr(self, "metric_"):
            raise NotFittedError("TangentSpace must be fitted before use")

    def transform(self, X):
        self._check_fitted()
        X, _ = check_spd_batch(X)
        if X.shape[-1] != self.dim_:
            raise InvalidInput(
                f"matrices of dim {X.shape[-1]} fed to a dim-{self.dim_} transformer"
            )
        return np.stack([self.metric_.forward(S) for S in X])

    def inverse_transform(self, T):
        self._check_fitted()
        T = np.asarray(T, dtype=np.float64)
        return np.stack([self.metric_.inverse(t) for t in T])


class SpdNetClassifier(BaseEstimator, ClassifierMixin):
    """Manifold network classifier with an sklearn interface.

    Parameters
    ----------
    layer_dims : tuple of int
        Output dimensions of the bilinear layers; the input dimension is
        taken from the data at fit time.
    alog_mode : {"mul", "div", "relu", "geom", "none"}
        How the final log layer adapts ("none" keeps the fixed logarithm).
    reeig_eps : float
        Eigenvalue floor of the rectifier between bilinear layers.
    lr, epochs, batch_size : SGD schedule.
    random_state : int
        Seeds initialization and batch shuffling; fits are reproducible.
    threads : int
        Worker threads for per-batch passes; results are identical to the
        single-threaded run.
    """

    def __init__(
        self,
        layer_dims=(5,),
        alog_mode="mul",
        reeig_eps=1e-4,
        lr=1e-2,
        epochs=100,
        batch_size=30,
        random_state=0,
        threads=1,
    ):
        self.layer_dims = layer_dims
        self.alog_mode = alog_mode
        self.reeig_eps = reeig_eps
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.random_state = random_state
        self.threads = threads

    def fit(self, X, y):
        X, _ = check_spd_batch(X)
        y = np.asarray(y)
        if y.shape != (X.shape[0],):
            raise InvalidInput("y must hold one label per matrix")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise InvalidInput("need at least two classes")
        config = net.NetworkConfig(
            dims=(X.shape[-1], *tuple(int(d) for d in self.layer_dims)),
            num_classes=self.classes_.shape[0],
            alog_mode=self.alog_mode,
            reeig_eps=self.reeig_eps,
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.random_state,
        )
        data = SpdDataset(X, encoded, self.classes_.shape[0])
        state = net.init_network(config)
        state, rows = net.train(state, data, threads=self.threads)
        self.state_ = state
        self.history_ = rows
        self.n_features_in_ = X.shape[-1] ** 2
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise NotFittedError("SpdNetClassifier must be fitted before use")

    def decision_function(self, X):
        self._check_fitted()
        X, _ = check_spd_batch(X)
        return net.forward(self.state_, X)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        self._check_fitted()
        return self.classes_[self.decision_function(X).argmax(axis=1)]
