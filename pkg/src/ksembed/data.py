"""Dataset ingestion and preprocessing for the benchmark runner.

Features are stored as a ``d x n`` :class:`SparseDataMatrix` (one column
per data point) with explicit zeros dropped.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from ksembed._rng import stream
from ksembed.errors import InvalidArgumentError
from ksembed.linalg import SparseDataMatrix


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features, targets and the preprocessing that produced them.

    Attributes:
        features: ``d x n`` data matrix.
        targets: length-``n`` response vector.
        feature_mean, feature_scale: per-feature standardization that was
            applied (``None`` if none), so test data can be transformed alike.
        global_scale: final multiplier applied after standardization.
        clip: bound on the absolute standardized value (``None`` if no clipping).
    """

    features: SparseDataMatrix
    targets: np.ndarray
    feature_mean: np.ndarray | None = None
    feature_scale: np.ndarray | None = None
    global_scale: float = 1.0
    meta: dict = field(default_factory=dict)
    clip: float | None = None

    def __post_init__(self):
        t = np.asarray(self.targets, dtype=np.float64).ravel()
        if t.size != self.features.n_cols:
            raise InvalidArgumentError(f"{t.size} targets for {self.features.n_cols} points")
        if not np.all(np.isfinite(t)):
            raise InvalidArgumentError("targets must be finite")
        object.__setattr__(self, "targets", t)

    @property
    def n(self) -> int:
        return self.features.n_cols

    @property
    def d(self) -> int:
        return self.features.n_rows

    @property
    def max_sq_norm(self) -> float:
        return float(np.max(self.features.column_sq_norms))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(
            self.features.select_columns(idx),
            self.targets[idx],
            self.feature_mean,
            self.feature_scale,
            self.global_scale,
            dict(self.meta),
            self.clip,
        )

    def transform(self, features) -> SparseDataMatrix:
        """Apply this dataset's preprocessing to raw ``d x m`` features."""
        X = np.asarray(features.toarray() if isinstance(features, SparseDataMatrix) else features, dtype=np.float64)
        if self.feature_mean is not None:
            X = (X - self.feature_mean[:, None]) / self.feature_scale[:, None]
        if self.clip is not None:
            X = np.clip(X, -self.clip, self.clip)
        return SparseDataMatrix.from_dense(X * self.global_scale)

    def like(self, other: "Dataset") -> "Dataset":
        """``other`` (raw features) put through this dataset's preprocessing."""
        return Dataset(
            self.transform(other.features),
            other.targets,
            self.feature_mean,
            self.feature_scale,
            self.global_scale,
            dict(other.meta),
            self.clip,
        )


def _parse_float(token: str, path, line: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise InvalidArgumentError(f"{path}:{line}: non-numeric {what} {token!r}") from None
    if not math.isfinite(value):
        raise InvalidArgumentError(f"{path}:{line}: non-finite {what} {token!r}")
    return value


def _read_csv(path: Path, target_column: int, header: bool, delimiter: str):
    rows, targets = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        width = None
        for lineno, rec in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not rec or all(not t.strip() for t in rec):
                continue
            if width is None:
                width = len(rec)
                if width < 2:
                    raise InvalidArgumentError(f"{path}:{lineno}: need at least one feature and a target")
                tc = target_column % width
            elif len(rec) != width:
                raise InvalidArgumentError(f"{path}:{lineno}: expected {width} fields, got {len(rec)}")
            targets.append(_parse_float(rec[tc].strip(), path, lineno, "target"))
            rows.append(
                [_parse_float(t.strip(), path, lineno, "feature") for k, t in enumerate(rec) if k != tc]
            )
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    return sp.csc_matrix(np.asarray(rows).T), np.asarray(targets)


def _read_libsvm(path: Path):
    data, ri, ci, targets = [], [], [], []
    d = 0
    with open(path) as fh:
        col = 0
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            targets.append(_parse_float(tokens[0], path, lineno, "target"))
            for tok in tokens[1:]:
                key, sep, val = tok.partition(":")
                if not sep or not key.isdigit() or int(key) < 1:
                    raise InvalidArgumentError(f"{path}:{lineno}: malformed feature {tok!r}")
                idx = int(key) - 1
                ri.append(idx)
                ci.append(col)
                data.append(_parse_float(val, path, lineno, "feature"))
                d = max(d, idx + 1)
            col += 1
    if not targets:
        raise InvalidArgumentError(f"{path}: no data rows")
    X = sp.csc_matrix((data, (ri, ci)), shape=(max(d, 1), len(targets)))
    return X, np.asarray(targets)


def load_dataset(
    path,
    format: str = "csv",
    target_column: int = -1,
    normalize: bool = False,
    radius: float | None = None,
    header: bool = False,
    delimiter: str = ",",
) -> Dataset:
    """Read a dataset from disk.

    Args:
        path: CSV or libsvm file.
        format: ``"csv"`` (one point per line, target at ``target_column``)
            or ``"libsvm"`` (``<target> <idx>:<val> ...`` with 1-based indices).
        target_column: CSV column holding the target; negative counts from the end.
        normalize: standardize every feature to zero mean and unit variance.
        radius: if given, rescale so the largest column norm equals it.
        header: skip the first CSV line.

    Raises:
        InvalidArgumentError: on unparsable input, with ``path:line`` in the message.
    """
    path = Path(path)
    if format == "csv":
        X, y = _read_csv(path, target_column, header, delimiter)
    elif format == "libsvm":
        X, y = _read_libsvm(path)
    else:
        raise InvalidArgumentError(f"unknown format {format!r}; use 'csv' or 'libsvm'")
    X.eliminate_zeros()
    ds = Dataset(SparseDataMatrix.from_scipy(X), y, meta={"source": str(path), "format": format})
    return preprocess(ds, normalize=normalize, radius=radius)


WINE_FILES = ("winequality-red.csv", "winequality-white.csv")


def _sniff_csv(path: Path) -> tuple[str, bool]:
    with open(path, newline="") as fh:
        first = fh.readline()
    delimiter = ";" if first.count(";") > first.count(",") else ","
    head = first.split(delimiter)[0].strip().strip('"')
    try:
        float(head)
        return delimiter, False
    except ValueError:
        return delimiter, True


def load_wine_quality(path) -> Dataset:
    """Wine Quality data (11 physico-chemical features, quality as target).

    ``path`` is either a directory holding the red and white files of the
    UCI release (read in that order, 6497 points in total) or a single CSV
    with quality in the last column.  The delimiter and header are sniffed.
    """
    path = Path(path)
    files = [path / name for name in WINE_FILES] if path.is_dir() else [path]
    parts = []
    for f in files:
        if not f.exists():
            raise InvalidArgumentError(f"{f}: no such file")
        delimiter, header = _sniff_csv(f)
        parts.append(_read_csv(f, -1, header, delimiter))
    X = sp.hstack([p[0] for p in parts], format="csc")
    y = np.concatenate([p[1] for p in parts])
    if X.shape[0] != 11:
        raise InvalidArgumentError(f"{path}: expected 11 wine features, got {X.shape[0]}")
    X.eliminate_zeros()
    return Dataset(SparseDataMatrix.from_scipy(X), y, meta={"source": str(path), "format": "wine"})


def preprocess(
    ds: Dataset,
    normalize: bool = False,
    radius: float | None = None,
    scale: float | None = None,
    clip: float | None = None,
) -> Dataset:
    """Standardize features and/or rescale globally.

    ``clip`` winsorizes every (standardized) feature to ``[-clip, clip]``.
    ``radius`` fixes the largest column norm; ``scale`` multiplies directly
    (for example ``1/bandwidth`` to bring a Gaussian kernel to unit width).
    """
    X = ds.features.toarray()
    mean = scale_vec = None
    if normalize:
        mean = X.mean(axis=1)
        scale_vec = X.std(axis=1)
        scale_vec[scale_vec == 0] = 1.0
        X = (X - mean[:, None]) / scale_vec[:, None]
    if clip is not None:
        if not clip > 0:
            raise InvalidArgumentError("clip must be positive")
        X = np.clip(X, -clip, clip)
    g = 1.0
    if scale is not None:
        if not scale > 0:
            raise InvalidArgumentError("scale must be positive")
        g *= float(scale)
    if radius is not None:
        if not radius > 0:
            raise InvalidArgumentError("radius must be positive")
        top = float(np.max(np.linalg.norm(X * g, axis=0)))
        if top > 0:
            g *= radius / top
    meta = dict(ds.meta, normalized=bool(normalize), radius=radius, scale=scale, clip=clip)
    return Dataset(SparseDataMatrix.from_dense(X * g), ds.targets, mean, scale_vec, g, meta, clip)


def train_test_split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < test_fraction < 1:
        raise InvalidArgumentError("test_fraction must lie in (0, 1)")
    n_test = max(1, int(round(test_fraction * ds.n)))
    if n_test >= ds.n:
        raise InvalidArgumentError("dataset too small to split")
    perm = stream(seed, "train_test_split").permutation(ds.n)
    return ds.subset(np.sort(perm[n_test:])), ds.subset(np.sort(perm[:n_test]))


def synthetic_regression(n: int, d: int, seed: int = 0, noise: float = 0.1, density: float = 1.0) -> Dataset:
    """Smooth random target on Gaussian inputs, for tests and timing runs."""
    rng = stream(seed, "synthetic_regression", n, d)
    X = rng.standard_normal((d, n)) / math.sqrt(d)
    if density < 1.0:
        X *= rng.random((d, n)) < density
    w = rng.standard_normal(d)
    f = np.sin(2.0 * (w @ X)) + 0.5 * np.cos(np.sum(X**2, axis=0))
    y = f + noise * rng.standard_normal(n)
    return Dataset(SparseDataMatrix.from_dense(X), y, meta={"source": "synthetic", "f_star": f})
