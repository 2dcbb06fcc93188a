"""A small trainable network on SPD inputs.

The stack is a sequence of bilinear layers with orthonormal-row weights,
eigenvalue rectification between consecutive bilinear layers, a final
log-domain projection (fixed matrix logarithm or its adaptive variant),
full flattening, and an affine softmax classifier.

Forward and backward passes are vectorized over the batch; per-sample
gradients are stacked and reduced in one place (a mean over the sample
axis) so training is bitwise deterministic, with or without the optional
thread pool.
"""

import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import gradients as grad
from .exceptions import ConfigError, DatasetError, BadMagic, DimensionMismatch
from .validation import BASE_GUARD

ALOG_MODES = ("mul", "div", "relu", "geom", "none")

RELU_EPS = 0.01

_MAGIC = b"SPDN"
_VERSION = 1


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending epoch."""

    def __init__(self, epoch):
        super().__init__(f"non-finite loss at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class NetworkConfig:
    dims: tuple
    num_classes: int
    alog_mode: str = "mul"
    reeig_eps: float = 1e-4
    lr: float = 1e-2
    batch_size: int = 30
    epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 1 or any(d < 1 for d in dims):
            raise ConfigError(f"invalid dims {dims}")
        if any(a < b for a, b in zip(dims, dims[1:])):
            raise ConfigError(f"dims must be non-increasing, got {dims}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.alog_mode not in ALOG_MODES:
            raise ConfigError(f"alog_mode must be one of {ALOG_MODES}")
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr, batch_size, epochs must be non-negative/positive")

    @property
    def feature_dim(self):
        return self.dims[-1] ** 2


@dataclass
class TrainState:
    config: NetworkConfig
    bimap_weights: list
    alog_param: np.ndarray
    clf_weight: np.ndarray
    clf_bias: np.ndarray
    epoch: int = 0
    rng: np.random.Generator = None
    spd_violations: int = 0
    factor_history: list = field(default_factory=list)


def init_network(config, seed=None):
    """Deterministically initialize parameters from a seed.

    Bilinear weights are the orthonormal-row factors of seeded Gaussian
    matrices; the adaptive-log parameter starts at the value that makes the
    layer equal the plain matrix logarithm (multiplier 1, divisor 1, base
    e); the classifier starts at zero.
    """
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    weights = []
    dims = config.dims
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        G = rng.standard_normal((d_out, d_in))
        weights.append(grad.qr_orthonormal_rows(G))
    d_last = dims[-1]
    if config.alog_mode in ("mul", "div"):
        alog_param = np.ones(d_last)
    elif config.alog_mode in ("relu", "geom"):
        alog_param = np.full(d_last, np.e)
    else:
        alog_param = np.ones(d_last)  # fixed, not trained
    clf_weight = np.zeros((config.num_classes, d_last * d_last))
    clf_bias = np.zeros(config.num_classes)
    return TrainState(config, weights, alog_param, clf_weight, clf_bias, rng=rng)


def effective_base(raw, mode):
    """Positive base implied by a raw parameter, with the guard band repaired.

    RELU clamps below at RELU_EPS first; any base whose log magnitude falls
    inside the guard band around 1 is nudged to exp(BASE_GUARD), the
    closest value the base-vector invariant admits.
    """
    a = np.asarray(raw, dtype=np.float64)
    if mode == "relu":
        a = np.maximum(a, RELU_EPS)
    return np.where(np.abs(np.log(a)) < BASE_GUARD, np.exp(BASE_GUARD), a)


def effective_factors(state):
    """Diagonal multiplier applied to log-eigenvalues in the last layer."""
    mode = state.config.alog_mode
    p = state.alog_param
    if mode == "mul":
        return p.copy()
    if mode == "div":
        return 1.0 / p
    if mode in ("relu", "geom"):
        return 1.0 / np.log(effective_base(p, mode))
    return np.ones_like(p)


def _eigh_desc(batch):
    # Batched symmetric eigendecomposition, eigenvalues descending.
    vals, vecs = np.linalg.eigh(batch)
    return vecs[..., ::-1], vals[..., ::-1]


def _forward_backward(state, X, y=None, grad_logits=None):
    """Forward pass and (optionally) per-sample gradients.

    With ``y`` given, the softmax cross-entropy drives the backward pass;
    alternatively an explicit ``grad_logits`` batch can be injected. When
    neither is given only the forward quantities are returned.

    Returns a dict with logits, per-sample losses/hits, per-sample
    parameter gradient stacks, and the minimum eigenvalue seen at any
    layer boundary.
    """
    cfg = state.config
    N = X.shape[0]
    d_last = cfg.dims[-1]
    n_bimaps = len(state.bimap_weights)

    cur = X
    bimap_inputs = []
    reeig_decomps = []
    min_eig = np.inf
    for k, W in enumerate(state.bimap_weights):
        bimap_inputs.append(cur)
        cur = np.einsum("oi,nij,pj->nop", W, cur, W, optimize=True)
        if k < n_bimaps - 1:
            U, s = _eigh_desc(cur)
            min_eig = min(min_eig, float(s.min()))
            reeig_decomps.append((U, s))
            s_clamped = np.maximum(s, cfg.reeig_eps)
            cur = np.einsum("nij,nj,nkj->nik", U, s_clamped, U, optimize=True)

    U, s = _eigh_desc(cur)
    min_eig = min(min_eig, float(s.min()))
    A = effective_factors(state)
    logs = np.log(np.maximum(s, 1e-300))
    Xlog = np.einsum("nij,nj,nkj->nik", U, A * logs, U, optimize=True)
    flat = Xlog.reshape(N, d_last * d_last)
    logits = flat @ state.clf_weight.T + state.clf_bias

    out = {"logits": logits, "min_eig": min_eig}
    if y is None and grad_logits is None:
        return out

    if grad_logits is None:
        losses, g_logits, hits = loss_softmax_ce_batch(logits, y)
        out["losses"] = losses
        out["hits"] = hits
    else:
        g_logits = np.asarray(grad_logits, dtype=np.float64)

    # classifier
    g_clf_w = np.einsum("nc,nf->ncf", g_logits, flat)
    g_clf_b = g_logits
    g_flat = g_logits @ state.clf_weight
    G = g_flat.reshape(N, d_last, d_last)
    G = (G + np.swapaxes(G, -1, -2)) / 2.0

    # adaptive log layer
    Ghat = np.einsum("nji,njk,nkl->nil", U, G, U, optimize=True)
    fvals = A * logs
    fprime = A / s
    delta = s[:, :, None] - s[:, None, :]
    close = np.abs(delta) <= 1e-10 * np.maximum(
        1.0, np.abs(s).max(axis=-1)
    )[:, None, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.where(
            close,
            fprime[:, :, None],
            (fvals[:, :, None] - fvals[:, None, :]) / delta,
        )
    g_cur = np.einsum("nij,njk,nlk->nil", U, K * Ghat, U, optimize=True)
    g_cur = (g_cur + np.swapaxes(g_cur, -1, -2)) / 2.0

    mode = cfg.alog_mode
    diagG = np.einsum("nii->ni", Ghat)
    g_A = diagG * logs  # per-sample gradient w.r.t. the multiplier
    if mode == "mul":
        g_param = g_A
    elif mode == "div":
        g_param = g_A * (-1.0 / state.alog_param**2)
    elif mode in ("relu", "geom"):
        base = effective_base(state.alog_param, mode)
        g_param = g_A * (-1.0 / (base * np.log(base) ** 2))
        if mode == "relu":
            g_param = g_param * (state.alog_param > RELU_EPS)
    else:
        g_param = np.zeros_like(g_A)

    # bilinear stack, last to first
    g_weights = [None] * n_bimaps
    for k in range(n_bimaps - 1, -1, -1):
        if k < n_bimaps - 1:
            Ur, sr = reeig_decomps[k]
            Ghat_r = np.einsum("nji,njk,nkl->nil", Ur, g_cur, Ur, optimize=True)
            fvals_r = np.maximum(sr, cfg.reeig_eps)
            fprime_r = (sr > cfg.reeig_eps).astype(np.float64)
            delta_r = sr[:, :, None] - sr[:, None, :]
            close_r = np.abs(delta_r) <= 1e-10 * np.maximum(
                1.0, np.abs(sr).max(axis=-1)
            )[:, None, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                Kr = np.where(
                    close_r,
                    fprime_r[:, :, None],
                    (fvals_r[:, :, None] - fvals_r[:, None, :]) / delta_r,
                )
            g_cur = np.einsum("nij,njk,nlk->nil", Ur, Kr * Ghat_r, Ur, optimize=True)
            g_cur = (g_cur + np.swapaxes(g_cur, -1, -2)) / 2.0
        W = state.bimap_weights[k]
        S_in = bimap_inputs[k]
        g_weights[k] = 2.0 * np.einsum(
            "nij,jk,nkl->nil", g_cur, W, S_in, optimize=True
        )
        g_cur = np.einsum("ji,njk,kl->nil", W, g_cur, W, optimize=True)

    out.update(
        grad_clf_weight=g_clf_w,
        grad_clf_bias=g_clf_b,
        grad_alog=g_param,
        grad_bimaps=g_weights,
        grad_input=g_cur,
    )
    return out


def loss_softmax_ce_batch(logits, labels):
    """Per-sample stable cross-entropy, its logit gradients, and hit flags."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    idx = np.arange(logits.shape[0])
    losses = lse - z[idx, labels]
    g = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    g[idx, labels] -= 1.0
    hits = logits.argmax(axis=1) == labels
    return losses, g, hits


def loss_softmax_ce(logits, label):
    """Single-sample convenience wrapper returning (loss, grad_logits)."""
    losses, g, _ = loss_softmax_ce_batch(np.atleast_2d(logits), np.array([label]))
    return float(losses[0]), g[0]


def forward(state, S):
    """Logits for one SPD matrix (or a batch)."""
    S = np.asarray(S, dtype=np.float64)
    single = S.ndim == 2
    out = _forward_backward(state, S[None] if single else S)
    return out["logits"][0] if single else out["logits"]


def _batch_passes(state, X, y, threads):
    """Per-sample losses/hits/gradient stacks, optionally chunked over threads.

    Chunking never changes per-sample arithmetic, so results are identical
    to the single-call path; all reduction happens in the caller.
    """
    if threads <= 1 or X.shape[0] < 2:
        return _forward_backward(state, X, y)
    bounds = np.linspace(0, X.shape[0], threads + 1).astype(int)
    chunks = [(X[a:b], y[a:b]) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(lambda c: _forward_backward(state, c[0], c[1]), chunks))
    out = {"min_eig": min(p["min_eig"] for p in parts)}
    for key in ("logits", "losses", "hits", "grad_clf_weight", "grad_clf_bias",
                "grad_alog", "grad_input"):
        out[key] = np.concatenate([p[key] for p in parts])
    out["grad_bimaps"] = [
        np.concatenate([p["grad_bimaps"][k] for p in parts])
        for k in range(len(state.bimap_weights))
    ]
    return out


def train_epoch(state, dataset, config=None, threads=1):
    """One pass of seeded mini-batch SGD over the dataset.

    Batch gradients are means over samples. Bilinear weights move by the
    QR-retracted manifold step, bases in geom mode by multiplicative RSGD,
    everything else by plain SGD. Returns the mutated state and a dict
    with mean loss and accuracy over the epoch's batches.
    """
    cfg = config or state.config
    X, y = dataset.matrices, dataset.labels
    order = state.rng.permutation(len(y))
    total_loss = 0.0
    total_hits = 0
    for start in range(0, len(y), cfg.batch_size):
        sel = order[start : start + cfg.batch_size]
        out = _batch_passes(state, X[sel], y[sel], threads)
        if out["min_eig"] <= 0.0:
            state.spd_violations += 1
        batch_loss = float(out["losses"].mean())
        if not np.isfinite(batch_loss):
            raise TrainingDiverged(state.epoch + 1)
        total_loss += batch_loss * len(sel)
        total_hits += int(out["hits"].sum())

        g_clf_w = out["grad_clf_weight"].mean(axis=0)
        g_clf_b = out["grad_clf_bias"].mean(axis=0)
        g_alog = out["grad_alog"].mean(axis=0)
        state.clf_weight = state.clf_weight - cfg.lr * g_clf_w
        state.clf_bias = state.clf_bias - cfg.lr * g_clf_b
        mode = cfg.alog_mode
        if mode in ("mul", "div", "relu"):
            state.alog_param = state.alog_param - cfg.lr * g_alog
        elif mode == "geom":
            state.alog_param = grad.rsgd_positive_scalar(
                state.alog_param, g_alog, cfg.lr
            )
        for k, W in enumerate(state.bimap_weights):
            g_W = out["grad_bimaps"][k].mean(axis=0)
            state.bimap_weights[k] = grad.stiefel_update(W, g_W, cfg.lr)

    state.epoch += 1
    state.factor_history.append(effective_factors(state))
    metrics = {
        "loss": total_loss / len(y),
        "accuracy": total_hits / len(y),
    }
    return state, metrics


def evaluate(state, dataset):
    """Accuracy, mean loss, and per-class confusion counts on a dataset."""
    out = _forward_backward(state, dataset.matrices)
    logits = out["logits"]
    losses, _, hits = loss_softmax_ce_batch(logits, dataset.labels)
    pred = logits.argmax(axis=1)
    C = state.config.num_classes
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    return {
        "accuracy": float(hits.mean()),
        "loss": float(losses.mean()),
        "confusion": confusion,
    }


def train(state, train_set, eval_set=None, threads=1, on_epoch=None):
    """Full training loop; returns metric rows (one per epoch).

    Each row is (epoch, train_loss, train_acc, eval_acc, elapsed_s) where
    train metrics are recomputed on the whole training set after the
    epoch's updates and elapsed_s is cumulative wall time.
    """
    rows = []
    t0 = time.perf_counter()
    for _ in range(state.config.epochs):
        state, _ = train_epoch(state, train_set, threads=threads)
        tr = evaluate(state, train_set)
        ev = evaluate(state, eval_set) if eval_set is not None else tr
        row = (state.epoch, tr["loss"], tr["accuracy"], ev["accuracy"],
               time.perf_counter() - t0)
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return state, rows


def metrics_to_csv(rows):
    """Render metric rows with the fixed schema; floats use shortest repr."""
    lines = ["epoch,train_loss,train_acc,eval_acc,elapsed_s"]
    for epoch, loss, acc, ev, elapsed in rows:
        lines.append(f"{epoch},{loss!r},{acc!r},{ev!r},{elapsed:.3f}")
    return "\n".join(lines) + "\n"


_MODE_CODE = {m: i for i, m in enumerate(ALOG_MODES)}


def save_checkpoint(state, path):
    """Versioned binary checkpoint: magic, config block, then parameters."""
    cfg = state.config
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(cfg.dims)))
        fh.write(struct.pack(f"<{len(cfg.dims)}I", *cfg.dims))
        fh.write(
            struct.pack(
                "<IIdddIIQ",
                cfg.num_classes,
                _MODE_CODE[cfg.alog_mode],
                cfg.reeig_eps,
                cfg.lr,
                0.0,  # reserved
                cfg.batch_size,
                cfg.epochs,
                cfg.seed,
            )
        )
        fh.write(struct.pack("<I", state.epoch))
        for W in state.bimap_weights:
            fh.write(np.ascontiguousarray(W, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.alog_param, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.clf_weight, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.clf_bias, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Rebuild a TrainState from a checkpoint file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise BadMagic(f"{path} does not look like a model checkpoint")
    off = 4
    (version,) = struct.unpack_from("<I", raw, off)
    off += 4
    if version != _VERSION:
        raise DatasetError(f"unsupported checkpoint version {version}")
    (ndims,) = struct.unpack_from("<I", raw, off)
    off += 4
    dims = struct.unpack_from(f"<{ndims}I", raw, off)
    off += 4 * ndims
    num_classes, mode_code, reeig_eps, lr, _reserved, batch_size, epochs, seed = (
        struct.unpack_from("<IIdddIIQ", raw, off)
    )
    off += struct.calcsize("<IIdddIIQ")
    (epoch,) = struct.unpack_from("<I", raw, off)
    off += 4
    cfg = NetworkConfig(
        dims=dims,
        num_classes=num_classes,
        alog_mode=ALOG_MODES[mode_code],
        reeig_eps=reeig_eps,
        lr=lr,
        batch_size=batch_size,
        epochs=epochs,
        seed=seed,
    )

    def take(shape):
        nonlocal off
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += 8 * count
        return arr.astype(np.float64)

    weights = [take((b, a)) for a, b in zip(dims[:-1], dims[1:])]
    alog_param = take((dims[-1],))
    clf_weight = take((num_classes, dims[-1] ** 2))
    clf_bias = take((num_classes,))
    if off != len(raw):
        raise DimensionMismatch(f"{path} has {len(raw) - off} trailing bytes")
    state = TrainState(cfg, weights, alog_param, clf_weight, clf_bias, epoch=epoch,
                       rng=np.random.default_rng(seed))
    return state
