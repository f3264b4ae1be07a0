"""Datasets: CSV and IDX ingestion, seeded synthetic generators, label noise."""

from __future__ import annotations

import csv
import gzip
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import LossKind

__all__ = [
    "Dataset",
    "load_csv",
    "write_csv",
    "load_idx",
    "write_idx",
    "make_synthetic",
    "corrupt_labels",
    "train_test_split",
    "SYNTHETIC_KINDS",
]

SYNTHETIC_KINDS = ("gaussian_linear", "two_blobs", "piecewise_linear_curve")


@dataclass
class Dataset:
    """Inputs ``X`` (N x p) and labels ``y``.

    ``task`` is ``"classification"`` (integer labels ``0..n_classes-1``) or
    ``"regression"`` (real targets).  ``cov`` holds the population input
    covariance when the generator knows it.
    """

    X: np.ndarray
    y: np.ndarray
    task: str = "classification"
    n_classes: int = 0
    label_noise: float = 0.0
    provenance: dict = field(default_factory=dict)
    cov: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        self.y = np.asarray(self.y)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.X.shape[0]} inputs but {self.y.shape[0]} labels")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("inputs contain NaN or infinity")
        if self.task == "classification":
            if self.y.size and np.any(self.y != np.round(self.y)):
                raise ValueError("class labels must be integers")
            self.y = self.y.astype(np.int64)
            if not self.n_classes:
                self.n_classes = int(self.y.max()) + 1 if self.y.size else 0
            if self.y.size and (self.y.min() < 0 or self.y.max() >= self.n_classes):
                raise ValueError(f"class labels must lie in [0, {self.n_classes})")
        elif self.task == "regression":
            self.y = self.y.astype(np.float64)
            if not np.all(np.isfinite(self.y)):
                raise ValueError("targets contain NaN or infinity")
        else:
            raise ValueError("task must be 'classification' or 'regression'")

    def __len__(self):
        return self.X.shape[0]

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def output_dim(self, loss) -> int:
        """Network output width for the given loss."""
        if LossKind.parse(loss) is LossKind.CROSS_ENTROPY:
            return self.n_classes
        return 1

    def targets(self, loss) -> np.ndarray:
        """Labels in the form the loss expects.

        Binary classification under a single-output loss maps class 0 to
        ``-1`` and class 1 to ``+1``.
        """
        loss = LossKind.parse(loss)
        if self.task == "regression":
            if loss in (LossKind.CROSS_ENTROPY, LossKind.HINGE):
                raise ValueError(f"{loss.value} loss needs class labels")
            return self.y
        if loss is LossKind.CROSS_ENTROPY:
            return self.y
        if self.n_classes != 2:
            raise ValueError(f"{loss.value} loss needs a binary task, got "
                             f"{self.n_classes} classes")
        return np.where(self.y == 1, 1.0, -1.0)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, X=self.X[idx], y=self.y[idx])


# ---------------------------------------------------------------- CSV

def load_csv(path, label_column, task: str = "classification") -> Dataset:
    """Read a numeric CSV with a header row; ``label_column`` names the labels."""
    path = os.fspath(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if label_column not in header:
            raise ValueError(f"{path}: no column named {label_column!r} "
                             f"(columns: {', '.join(header)})")
        li = header.index(label_column)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}:{lineno}: expected {len(header)} cells, "
                                 f"got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                bad = next(c for c in row if not _is_float(c))
                raise ValueError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    A = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    X = np.delete(A, li, axis=1)
    return Dataset(X, A[:, li], task=task,
                   provenance={"source": "csv", "path": path, "label_column": label_column})


def _is_float(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_csv(ds: Dataset, path, label_column: str = "label") -> None:
    """Write with ``repr`` floats so a read-back is exact."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(ds.p)] + [label_column])
        for x, y in zip(ds.X, ds.y):
            w.writerow([repr(float(v)) for v in x] + [repr(y.item())])


# ---------------------------------------------------------------- IDX

_IMAGES_MAGIC = 0x00000803
_LABELS_MAGIC = 0x00000801


def _read_bytes(path):
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _idx_header(buf, path, magic, ndim):
    need = 4 + 4 * ndim
    if len(buf) < need:
        raise ValueError(f"{path}: truncated header")
    got = int.from_bytes(buf[:4], "big")
    if got != magic:
        raise ValueError(f"{path}: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    dims = [int.from_bytes(buf[4 + 4 * i:8 + 4 * i], "big") for i in range(ndim)]
    return dims, need


def load_idx(images_path, labels_path, limit: int | None = None) -> Dataset:
    """Read an IDX image file (ubyte, 3-D) and label file (ubyte, 1-D).

    Pixels are divided by 255.  Files ending in ``.gz`` are decompressed.
    """
    ib = _read_bytes(images_path)
    lb = _read_bytes(labels_path)
    (n, rows, cols), ioff = _idx_header(ib, images_path, _IMAGES_MAGIC, 3)
    (m,), loff = _idx_header(lb, labels_path, _LABELS_MAGIC, 1)
    if n != m:
        raise ValueError(f"image count {n} does not match label count {m}")
    if len(ib) - ioff < n * rows * cols:
        raise ValueError(f"{images_path}: truncated, expected {n * rows * cols} "
                         f"pixel bytes, found {len(ib) - ioff}")
    if len(lb) - loff < m:
        raise ValueError(f"{labels_path}: truncated, expected {m} label bytes")
    k = n if limit is None else min(int(limit), n)
    pix = np.frombuffer(ib, dtype=np.uint8, count=k * rows * cols, offset=ioff)
    lab = np.frombuffer(lb, dtype=np.uint8, count=k, offset=loff)
    X = pix.reshape(k, rows * cols).astype(np.float64) / 255.0
    return Dataset(X, lab.astype(np.int64), n_classes=max(int(lab.max()) + 1, 2) if k else 0,
                   provenance={"source": "idx", "images": os.fspath(images_path),
                               "labels": os.fspath(labels_path), "limit": limit})


def write_idx(images, labels, images_path, labels_path) -> None:
    """Write uint8 arrays ``images (n, rows, cols)`` and ``labels (n,)``."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(_IMAGES_MAGIC.to_bytes(4, "big"))
        for d in images.shape:
            fh.write(int(d).to_bytes(4, "big"))
        fh.write(images.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(_LABELS_MAGIC.to_bytes(4, "big"))
        fh.write(int(labels.shape[0]).to_bytes(4, "big"))
        fh.write(labels.tobytes())


# ---------------------------------------------------------------- synthetic

def _gaussian_linear(rng, n=200, p=5, cov=None, noise=0.1, w=None):
    cov = np.eye(p) if cov is None else np.asarray(cov, dtype=np.float64)
    if cov.shape != (p, p):
        raise ValueError(f"cov must be {p}x{p}")
    try:
        C = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("cov must be symmetric positive definite") from None
    X = rng.standard_normal((n, p)) @ C.T
    w = rng.standard_normal(p) if w is None else np.asarray(w, dtype=np.float64)
    y = X @ w + noise * rng.standard_normal(n)
    return Dataset(X, y, task="regression", cov=cov.copy())


def _two_blobs(rng, n=200, p=2, separation=4.0, sigma=1.0, n_classes=2, overlap=False):
    if separation < 0 or sigma <= 0:
        raise ValueError("need separation >= 0 and sigma > 0")
    if not overlap and separation == 0:
        raise ValueError("non-overlapping blobs need separation > 0")
    # centres at +-separation/2 along a fixed unit direction
    u = np.ones(p) / np.sqrt(p)
    y = np.arange(n) % 2
    side = np.where(y == 1, 1.0, -1.0)
    Z = sigma * rng.standard_normal((n, p))
    if not overlap:
        # redraw points on the wrong side of the midplane <x, u> = 0
        bad = side * (Z @ u) <= -separation / 2
        while bad.any():
            Z[bad] = sigma * rng.standard_normal((int(bad.sum()), p))
            bad = side * (Z @ u) <= -separation / 2
    X = Z + np.outer(side * separation / 2, u)
    return Dataset(X, y, n_classes=n_classes)


def _piecewise_linear_curve(rng, n=200, pieces=4, noise=0.0, low=-1.0, high=1.0):
    if pieces < 1:
        raise ValueError("need at least one piece")
    knots = np.linspace(low, high, pieces + 1)
    heights = rng.uniform(-1.0, 1.0, pieces + 1)
    x = np.sort(rng.uniform(low, high, n))
    y = np.interp(x, knots, heights) + noise * rng.standard_normal(n)
    # constant column so bias-free networks can fit offsets
    X = np.column_stack([x, np.ones(n)])
    return Dataset(X, y, task="regression",
                   provenance={"knots": knots.tolist(), "heights": heights.tolist()})


_GENERATORS = {"gaussian_linear": _gaussian_linear, "two_blobs": _two_blobs,
               "piecewise_linear_curve": _piecewise_linear_curve}


def make_synthetic(kind: str, params: dict | None = None, seed: int = 0) -> Dataset:
    """Seeded synthetic data.

    ``gaussian_linear``: ``X ~ N(0, cov)``, ``y = X w + noise``; keeps ``cov``.
    ``two_blobs``: two Gaussian classes whose centres are ``separation``
    apart; unless ``overlap`` is true, draws that cross the midplane are
    redrawn so the classes are linearly separable through the origin.  ``piecewise_linear_curve``: a random continuous piecewise-linear
    function of one variable, plus a constant input column.
    """
    if kind not in _GENERATORS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTHETIC_KINDS}")
    params = dict(params or {})
    try:
        ds = _GENERATORS[kind](np.random.default_rng(seed), **params)
    except TypeError as exc:
        raise ValueError(f"invalid parameters for {kind}: {exc}") from None
    ds.provenance = {"source": "synthetic", "kind": kind, "seed": seed,
                     "params": {k: (np.asarray(v).tolist() if isinstance(v, np.ndarray) else v)
                                for k, v in params.items()},
                     **ds.provenance}
    return ds


def corrupt_labels(ds: Dataset, alpha: float, seed: int = 0) -> Dataset:
    """Replace each label, with probability ``alpha``, by a uniform draw.

    The draw is over all classes, so a replaced label can coincide with the
    original.  ``alpha = 0`` returns an identical copy.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if ds.task != "classification":
        raise ValueError("label corruption needs class labels")
    rng = np.random.default_rng(seed)
    hit = rng.random(ds.N) < alpha
    fresh = rng.integers(0, ds.n_classes, size=ds.N)
    y = np.where(hit, fresh, ds.y)
    prov = dict(ds.provenance, label_noise_seed=seed)
    return replace(ds, y=y, label_noise=float(alpha), provenance=prov)


def train_test_split(ds: Dataset, test_fraction: float = 0.25, seed: int = 0):
    """Disjoint random split; returns ``(train, test, train_idx, test_idx)``."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(ds.N)
    k = max(1, int(round(test_fraction * ds.N)))
    te, tr = np.sort(perm[:k]), np.sort(perm[k:])
    return ds.subset(tr), ds.subset(te), tr, te
