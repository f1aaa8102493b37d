"""Sparse/dense primitives shared by every sampler.

The dataset is stored column-sparse (one column per data point).  Dense
matrices are plain ``numpy`` arrays; the helpers here validate them at the
call boundary and never mutate their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ksembed._rng import stream
from ksembed.errors import InvalidArgumentError

PSD_TOL = 1e-8
SPECTRAL_ROUNDING = 1e-12


@dataclass(frozen=True, eq=False)
class SparseDataMatrix:
    """A d x n dataset whose columns are the data points.

    Construct through :meth:`from_dense`, :meth:`from_columns` or
    :meth:`from_scipy`; all of them drop explicit zeros, sort indices and
    reject non-finite values.
    """

    csc: sp.csc_matrix

    def __post_init__(self):
        m = self.csc
        if not sp.isspmatrix_csc(m):
            raise InvalidArgumentError("SparseDataMatrix expects a csc_matrix")
        if m.shape[0] < 1 or m.shape[1] < 1:
            raise InvalidArgumentError(f"dataset must be at least 1x1, got {m.shape}")
        if not np.all(np.isfinite(m.data)):
            raise InvalidArgumentError("dataset contains non-finite values")

    @classmethod
    def from_scipy(cls, matrix) -> "SparseDataMatrix":
        m = sp.csc_matrix(matrix, dtype=np.float64, copy=True)
        m.eliminate_zeros()
        m.sort_indices()
        m.sum_duplicates()
        return cls(m)

    @classmethod
    def from_dense(cls, array) -> "SparseDataMatrix":
        a = np.asarray(array, dtype=np.float64)
        if a.ndim == 1:
            a = a[:, None]
        if a.ndim != 2:
            raise InvalidArgumentError("dense dataset must be 1-D or 2-D")
        return cls.from_scipy(sp.csc_matrix(a))

    @classmethod
    def from_columns(
        cls, n_rows: int, columns: Sequence[Iterable[tuple[int, float]]]
    ) -> "SparseDataMatrix":
        """Build from per-column ``(row_index, value)`` lists."""
        rows, cols, vals = [], [], []
        for c, entries in enumerate(columns):
            last = -1
            for i, v in entries:
                if not 0 <= i < n_rows:
                    raise InvalidArgumentError(f"row index {i} outside [0, {n_rows})")
                if i <= last:
                    raise InvalidArgumentError("row indices within a column must increase")
                last = i
                rows.append(i)
                cols.append(c)
                vals.append(float(v))
        m = sp.csc_matrix((vals, (rows, cols)), shape=(n_rows, len(columns)))
        return cls.from_scipy(m)

    @property
    def n_rows(self) -> int:
        return self.csc.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csc.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.csc.shape

    @property
    def nnz(self) -> int:
        return self.csc.nnz

    @cached_property
    def csr(self) -> sp.csr_matrix:
        return self.csc.tocsr()

    @cached_property
    def column_sq_norms(self) -> np.ndarray:
        return np.asarray(self.csc.multiply(self.csc).sum(axis=0)).ravel()

    def column(self, c: int) -> list[tuple[int, float]]:
        lo, hi = self.csc.indptr[c], self.csc.indptr[c + 1]
        return list(zip(self.csc.indices[lo:hi].tolist(), self.csc.data[lo:hi].tolist()))

    def toarray(self) -> np.ndarray:
        return self.csc.toarray()

    def select_columns(self, idx) -> "SparseDataMatrix":
        return SparseDataMatrix(self.csc[:, np.asarray(idx)].tocsc())

    def scaled(self, factor: float) -> "SparseDataMatrix":
        return SparseDataMatrix.from_scipy(self.csc * float(factor))


def as_data_matrix(X) -> SparseDataMatrix:
    """Coerce arrays, scipy matrices and :class:`SparseDataMatrix` alike."""
    if isinstance(X, SparseDataMatrix):
        return X
    if sp.issparse(X):
        return SparseDataMatrix.from_scipy(X)
    return SparseDataMatrix.from_dense(X)


def as_column_vector(x, d: int) -> sp.csc_matrix:
    """Return ``x`` as a d x 1 sparse column, checking its dimension."""
    if isinstance(x, SparseDataMatrix):
        m = x.csc
    elif sp.issparse(x):
        m = sp.csc_matrix(x, dtype=np.float64)
        if m.shape[0] == 1 and m.shape[1] != 1:
            m = m.T.tocsc()
    else:
        a = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        m = sp.csc_matrix(a)
    if m.shape != (d, 1):
        raise InvalidArgumentError(f"expected a vector of dimension {d}, got shape {m.shape}")
    if not np.all(np.isfinite(m.data)):
        raise InvalidArgumentError("vector contains non-finite values")
    return m


def _check_finite(name: str, a: np.ndarray) -> None:
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0 or not np.isfinite(lam):
        raise InvalidArgumentError(f"lambda must be a positive finite real, got {lam}")
    return lam


def gaussian_matrix(rows: int, cols: int, seed: int, name: str = "gaussian") -> np.ndarray:
    """i.i.d. standard normal ``rows x cols`` matrix from the seeded stream ``name``."""
    if rows < 1 or cols < 1:
        raise InvalidArgumentError(f"gaussian_matrix needs positive sizes, got {rows}x{cols}")
    return stream(seed, "gaussian_matrix", name, rows, cols).standard_normal((rows, cols))


def regularized_inv_sqrt_apply(B, lam: float, H) -> np.ndarray:
    """Compute ``(B^T B + lam I)^{-1/2} H`` without forming an n x n matrix.

    With the thin SVD ``B = U S V^T`` the result is
    ``V diag((s^2 + lam)^{-1/2}) V^T H + lam^{-1/2} (H - V V^T H)``.
    ``B`` may have zero rows, in which case the answer is ``H / sqrt(lam)``.
    """
    lam = _check_lambda(lam)
    H = np.asarray(H, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if H.ndim == 1:
        H = H[:, None]
    n = H.shape[0]
    if B.ndim != 2 or B.shape[1] != n:
        if B.size == 0:
            B = np.zeros((0, n))
        else:
            raise InvalidArgumentError(f"B has {B.shape} but H has {n} rows")
    _check_finite("B", B)
    _check_finite("H", H)
    inv_sqrt_lam = 1.0 / np.sqrt(lam)
    if B.shape[0] == 0:
        return H * inv_sqrt_lam
    _, sing, Vt = np.linalg.svd(B, full_matrices=False)
    VtH = Vt @ H
    scale = 1.0 / np.sqrt(sing**2 + lam)
    return Vt.T @ (scale[:, None] * VtH) + inv_sqrt_lam * (H - Vt.T @ VtH)


def statistical_dimension(eigenvalues, lam: float) -> float:
    """Effective dimension ``sum_i ev_i / (ev_i + lam)``.

    Negative eigenvalues down to ``-1e-9 * max`` are treated as rounding
    noise and clamped to zero.
    """
    lam = _check_lambda(lam)
    ev = np.asarray(eigenvalues, dtype=np.float64).ravel()
    if ev.size == 0:
        return 0.0
    _check_finite("eigenvalues", ev)
    scale = max(float(np.max(np.abs(ev))), 0.0)
    if np.any(ev < -1e-9 * scale):
        raise InvalidArgumentError("eigenvalues must be non-negative")
    ev = np.clip(ev, 0.0, None)
    return float(np.sum(ev / (ev + lam)))


def check_psd(K, name: str = "K", tol: float = PSD_TOL) -> np.ndarray:
    """Validate symmetry and semi-definiteness up to ``tol * ||K||``; return the symmetrized matrix."""
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got {K.shape}")
    _check_finite(name, K)
    norm = float(np.max(np.abs(K))) * K.shape[0] if K.size else 0.0
    if np.max(np.abs(K - K.T), initial=0.0) > tol * max(norm, 1e-300):
        raise InvalidArgumentError(f"{name} is not symmetric")
    Ks = 0.5 * (K + K.T)
    if K.shape[0]:
        ev = np.linalg.eigvalsh(Ks)
        opnorm = max(float(np.max(np.abs(ev))), 0.0)
        if ev[0] < -tol * max(opnorm, 1e-300):
            raise InvalidArgumentError(f"{name} is not positive semi-definite (min eigenvalue {ev[0]:.3e})")
    return Ks


def generalized_eigenvalues(K, K_tilde, lam: float) -> np.ndarray:
    """Eigenvalues of ``(K_tilde + lam I)`` relative to ``(K + lam I)``.

    Computed by whitening with the Cholesky factor of ``K + lam I``.
    """
    lam = _check_lambda(lam)
    n = K.shape[0]
    A = K + lam * np.eye(n)
    C = K_tilde + lam * np.eye(n)
    L = np.linalg.cholesky(A)
    Linv_C = sla.solve_triangular(L, C, lower=True)
    W = sla.solve_triangular(L, Linv_C.T, lower=True)
    return np.linalg.eigvalsh(0.5 * (W + W.T))


def spectral_deviation(gammas: np.ndarray, epsilon: float) -> tuple[bool, float]:
    """Distance of the generalized eigenvalues outside ``[1/(1+eps), 1/(1-eps)]``.

    Excursions below ``SPECTRAL_ROUNDING`` (relative) count as rounding noise,
    so boundary cases such as ``Z = 0`` with ``lam = ||K|| / eps`` pass.
    """
    lo, hi = 1.0 / (1.0 + epsilon), 1.0 / (1.0 - epsilon)
    dev = max(lo - float(np.min(gammas)), float(np.max(gammas)) - hi, 0.0)
    if dev <= SPECTRAL_ROUNDING * hi:
        dev = 0.0
    return dev == 0.0, dev


def _check_epsilon(epsilon: float) -> float:
    epsilon = float(epsilon)
    if not 0.0 < epsilon < 1.0:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1), got {epsilon}")
    return epsilon


def spectral_approx_check(K, Z, lam: float, epsilon: float) -> tuple[bool, float]:
    """Test ``(K + lam I)/(1+eps) <= Z^T Z + lam I <= (K + lam I)/(1-eps)``.

    Returns ``(passed, max_relative_deviation)`` where the deviation is the
    largest distance of a generalized eigenvalue outside
    ``[1/(1+eps), 1/(1-eps)]`` (zero when the sandwich holds).
    """
    epsilon = _check_epsilon(epsilon)
    K = check_psd(K)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.shape[1] != K.shape[0]:
        raise InvalidArgumentError(f"Z has {Z.shape[1]} columns, K is {K.shape[0]}x{K.shape[0]}")
    _check_finite("Z", Z)
    return spectral_deviation(generalized_eigenvalues(K, Z.T @ Z, lam), epsilon)


def spectral_approx_check_gram(K, K_tilde, lam: float, epsilon: float) -> tuple[bool, float]:
    """Same test as :func:`spectral_approx_check` for an explicit surrogate ``K_tilde``."""
    epsilon = _check_epsilon(epsilon)
    K = check_psd(K)
    K_tilde = check_psd(K_tilde, "K_tilde")
    return spectral_deviation(generalized_eigenvalues(K, K_tilde, lam), epsilon)


def ridge_leverage_scores(Phi, lam: float) -> np.ndarray:
    """Scores ``phi_i^T (Phi^T Phi + lam I)^{-1} phi_i`` for every row of ``Phi``."""
    lam = _check_lambda(lam)
    Phi = np.asarray(Phi, dtype=np.float64)
    _check_finite("Phi", Phi)
    n = Phi.shape[1]
    A = Phi.T @ Phi + lam * np.eye(n)
    sol = sla.solve(A, Phi.T, assume_a="pos")
    return np.einsum("ij,ji->i", Phi, sol)
