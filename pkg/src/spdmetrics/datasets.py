"""SPD-valued classification datasets: container, file formats, synthesis.

Binary format (all little-endian):

    magic "SPDD" | u32 version=1 | u32 dim | u32 sample_count |
    u32 class_count | per sample: u32 label + dim*dim f64 row-major

The CSV alternative stores one sample per row: the integer label followed
by the dim*dim row-major entries. Matrices are stored in full (not packed)
so files stay debuggable; symmetry is re-validated on load.
"""

import struct
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import (
    BadMagic,
    DatasetError,
    DimensionMismatch,
    InvalidInput,
    StratificationError,
)
from .validation import check_spd_batch

_MAGIC = b"SPDD"
_VERSION = 1


@dataclass(frozen=True)
class SpdDataset:
    """Immutable container of same-dimension SPD matrices with dense labels."""

    matrices: np.ndarray  # (N, dim, dim)
    labels: np.ndarray  # (N,) int
    class_count: int
    name: str = ""
    repaired: np.ndarray = None  # (N,) bool, True where the loader jittered

    def __post_init__(self):
        # own (and freeze) private copies; callers keep their arrays writable
        m = np.array(self.matrices, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        if m.ndim != 3 or m.shape[1] != m.shape[2]:
            raise InvalidInput(f"matrices must be (N, n, n), got {m.shape}")
        if y.shape != (m.shape[0],):
            raise InvalidInput("labels must be one integer per matrix")
        if m.shape[0] and (y.min() < 0 or y.max() >= self.class_count):
            raise InvalidInput(
                f"labels must lie in [0, {self.class_count}), got "
                f"[{y.min()}, {y.max()}]"
            )
        rep = self.repaired
        rep = np.zeros(m.shape[0], bool) if rep is None else np.array(rep, bool)
        for arr in (m, y, rep):
            arr.flags.writeable = False
        object.__setattr__(self, "matrices", m)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "repaired", rep)

    @property
    def dim(self):
        return self.matrices.shape[1]

    def __len__(self):
        return self.matrices.shape[0]

    def subset(self, indices, name=None):
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            matrices=self.matrices[idx],
            labels=self.labels[idx],
            repaired=self.repaired[idx],
            name=self.name if name is None else name,
        )


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic synthetic SPD classification set."""

    dim: int = 10
    class_count: int = 3
    samples_per_class: int = 30
    eigenvalue_spread: float = 1.0
    rotation_noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if (
            self.dim < 1
            or self.class_count < 1
            or self.samples_per_class < 1
            or self.eigenvalue_spread <= 0
            or self.rotation_noise < 0
        ):
            raise InvalidInput(f"invalid synthetic spec {self}")


def _random_orthogonal(rng, n):
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def generate_synthetic(spec):
    """Sample a dataset of rotated, jittered log-spaced spectra.

    Each class owns a log-spaced eigenvalue profile (total log-range
    ``eigenvalue_spread``) and a fixed random orientation. A sample jitters
    the log-eigenvalues by N(0, 0.1) and perturbs the orientation by a
    Gaussian of scale ``rotation_noise`` before re-orthonormalization.
    Fully determined by the seed.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.dim
    half = spec.eigenvalue_spread / 2.0
    mats = []
    labels = []
    for c in range(spec.class_count):
        profile = np.linspace(half, -half, n)
        profile = rng.permutation(profile)
        Q_c = _random_orthogonal(rng, n)
        for _ in range(spec.samples_per_class):
            log_eigs = profile + rng.normal(0.0, 0.1, n)
            Q = Q_c + spec.rotation_noise * rng.standard_normal((n, n))
            Q, R = np.linalg.qr(Q)
            Q = Q * np.sign(np.diag(R))
            S = (Q * np.exp(log_eigs)) @ Q.T
            mats.append((S + S.T) / 2.0)
            labels.append(c)
    return SpdDataset(
        np.stack(mats),
        np.array(labels),
        spec.class_count,
        name=f"synthetic-d{n}-c{spec.class_count}-s{spec.seed}",
    )


def save(dataset, path):
    """Write the binary format; exact bytes are reproducible per dataset."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(
            struct.pack(
                "<IIII", _VERSION, dataset.dim, len(dataset), dataset.class_count
            )
        )
        for label, mat in zip(dataset.labels, dataset.matrices):
            fh.write(struct.pack("<I", int(label)))
            fh.write(np.ascontiguousarray(mat, dtype="<f8").tobytes())


def load(path, repair="reject", name=None):
    """Read the binary format back, validating every matrix.

    Parameters
    ----------
    path : str or Path
    repair : {"reject", "jitter"}
        Policy for matrices failing the SPD check: raise, or add a small
        diagonal bump and flag the sample.
    """
    if repair not in ("reject", "jitter"):
        raise InvalidInput(f"unknown repair policy {repair!r}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise BadMagic(f"{path} does not start with the dataset magic")
    version, dim, count, class_count = struct.unpack_from("<IIII", raw, 4)
    if version != _VERSION:
        raise DatasetError(f"unsupported dataset version {version}")
    off = 20
    per = 4 + 8 * dim * dim
    if len(raw) != off + per * count:
        raise DimensionMismatch(
            f"{path}: expected {off + per * count} bytes, found {len(raw)}"
        )
    labels = np.empty(count, np.int64)
    mats = np.empty((count, dim, dim))
    for i in range(count):
        (labels[i],) = struct.unpack_from("<I", raw, off)
        off += 4
        mats[i] = np.frombuffer(raw, "<f8", dim * dim, off).reshape(dim, dim)
        off += 8 * dim * dim
    if count:
        mats, repaired = check_spd_batch(mats, repair=(repair == "jitter"))
    else:
        repaired = np.zeros(0, bool)
    return SpdDataset(
        mats,
        labels,
        class_count,
        name=name or str(path),
        repaired=repaired,
    )


def save_csv(dataset, path):
    """One sample per row: label then dim*dim row-major entries."""
    with open(path, "w") as fh:
        for label, mat in zip(dataset.labels, dataset.matrices):
            entries = ",".join(repr(float(v)) for v in mat.ravel())
            fh.write(f"{int(label)},{entries}\n")


def load_csv(path, class_count=None, repair="reject", name=None):
    """Read the CSV alternative; the dimension is inferred from row length."""
    labels = []
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            labels.append(int(parts[0]))
            rows.append(np.array([float(v) for v in parts[1:]]))
    if not rows:
        raise DatasetError(f"{path} holds no samples")
    m = rows[0].shape[0]
    dim = int(round(np.sqrt(m)))
    if dim * dim != m or any(r.shape[0] != m for r in rows):
        raise DimensionMismatch(f"{path}: rows must hold a square matrix each")
    mats = np.stack([r.reshape(dim, dim) for r in rows])
    labels = np.array(labels)
    mats, repaired = check_spd_batch(mats, repair=(repair == "jitter"))
    return SpdDataset(
        mats,
        labels,
        class_count or int(labels.max()) + 1,
        name=name or str(path),
        repaired=repaired,
    )


def train_test_split(dataset, fraction, seed):
    """Deterministic stratified split; disjoint and exhaustive per class."""
    if not 0.0 < fraction < 1.0:
        raise InvalidInput("fraction must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    train_idx = []
    test_idx = []
    for c in range(dataset.class_count):
        idx = np.nonzero(dataset.labels == c)[0]
        if idx.shape[0] < 2:
            raise StratificationError(
                f"class {c} has {idx.shape[0]} sample(s), cannot split"
            )
        perm = rng.permutation(idx)
        k = int(round(fraction * idx.shape[0]))
        k = min(max(k, 1), idx.shape[0] - 1)
        train_idx.extend(perm[:k])
        test_idx.extend(perm[k:])
    return (
        dataset.subset(np.sort(train_idx), name=dataset.name + "/train"),
        dataset.subset(np.sort(test_idx), name=dataset.name + "/test"),
    )


def save_matrix_text(M, path):
    """Text matrix format: a dimension line, then rows at 17 significant digits."""
    M = np.asarray(M, dtype=np.float64)
    with open(path, "w") as fh:
        fh.write(f"{M.shape[0]}\n")
        for row in M:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")


def load_matrix_text(path):
    with open(path) as fh:
        n = int(fh.readline())
        rows = [
            [float(v) for v in fh.readline().split()] for _ in range(n)
        ]
    M = np.array(rows)
    if M.shape != (n, n):
        raise DimensionMismatch(f"{path}: expected a {n}x{n} matrix")
    return M
