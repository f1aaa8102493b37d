"""Dot-product kernels through truncated Taylor liftings.

A kernel ``k(x, y) = g(x) g(y) sum_j a_j <x, y>^j`` with ``a_j >= 0`` has the
explicit lifting

    phi(x) = g(x) * [sqrt(a_0) x^{(x)0}; sqrt(a_1) x^{(x)1}; ...; sqrt(a_q) x^{(x)q}]

once the series is truncated at degree ``q``.  The Gaussian kernel
``exp(-||x - y||^2 / 2)`` is the instance ``a_j = 1/j!`` with
``g(x) = exp(-||x||^2 / 2)``.  Block ``w`` of the lifting starts at row
``(d^w - 1)/(d - 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ksembed._rowsampler import TaylorRowSampler, embed_rows
from ksembed.errors import InvalidArgumentError, ResourceLimitError
from ksembed.linalg import SparseDataMatrix, as_column_vector, as_data_matrix
from ksembed.sampling import SamplerConfig, SamplingMatrix, recursive_leverage_sampling

DENSE_LIFTING_LIMIT = 10**7
TRUNCATION_TOLERANCE = 1e-9


@dataclass(frozen=True)
class TaylorKernelSpec:
    """Truncated Taylor kernel description.

    Attributes:
        family: ``"gaussian"``, ``"polynomial"``, ``"inverse_polynomial"`` or
            ``"taylor"`` (user-supplied coefficients, unit prefactor).
        log_coeffs: ``log a_j`` for ``j = 0..q``; ``-inf`` marks a zero coefficient.
        radius: optional bound on ``||x||^2``, enforced for the Gaussian family.
    """

    family: str
    log_coeffs: tuple[float, ...]
    radius: float | None = None

    def __post_init__(self):
        lc = np.asarray(self.log_coeffs, dtype=np.float64)
        if lc.ndim != 1 or lc.size < 1:
            raise InvalidArgumentError("need at least one coefficient")
        if np.any(np.isnan(lc)) or np.any(lc == np.inf):
            raise InvalidArgumentError("log coefficients must be finite or -inf")
        if not np.any(np.isfinite(lc)):
            raise InvalidArgumentError("at least one coefficient must be positive")
        if self.radius is not None and not self.radius >= 0:
            raise InvalidArgumentError("radius must be non-negative")

    @property
    def q(self) -> int:
        return len(self.log_coeffs) - 1

    @property
    def coeffs(self) -> np.ndarray:
        return np.exp(np.asarray(self.log_coeffs))

    @classmethod
    def gaussian(cls, q: int, radius: float | None = None) -> "TaylorKernelSpec":
        _check_degree(q)
        return cls("gaussian", tuple(-math.lgamma(j + 1) for j in range(q + 1)), radius)

    @classmethod
    def polynomial(cls, q: int) -> "TaylorKernelSpec":
        _check_degree(q)
        return cls("polynomial", tuple([-math.inf] * q + [0.0]))

    @classmethod
    def inverse_polynomial(cls, q: int) -> "TaylorKernelSpec":
        """``k(x, y) = 1 / (2 - <x, y>) = sum_j 2^{-j-1} <x, y>^j`` for unit-norm data."""
        _check_degree(q)
        return cls("inverse_polynomial", tuple(-(j + 1) * math.log(2.0) for j in range(q + 1)))

    @classmethod
    def from_coefficients(cls, coeffs) -> "TaylorKernelSpec":
        c = np.asarray(coeffs, dtype=np.float64)
        if np.any(c < 0) or not np.all(np.isfinite(c)):
            raise InvalidArgumentError("Taylor coefficients must be finite and non-negative")
        with np.errstate(divide="ignore"):
            return cls("taylor", tuple(float(v) for v in np.log(c)))

    def prefactor(self, X) -> np.ndarray:
        X = as_data_matrix(X)
        if self.family == "gaussian":
            return np.exp(-0.5 * X.column_sq_norms)
        return np.ones(X.n_cols)

    def check_radius(self, X) -> None:
        if self.family != "gaussian" or self.radius is None:
            return
        worst = float(np.max(as_data_matrix(X).column_sq_norms))
        if worst > self.radius * (1 + 1e-9):
            raise InvalidArgumentError(
                f"data has squared norm {worst:.6g} above the declared radius {self.radius:.6g}"
            )

    def frobenius_sq(self, X) -> float:
        """``||phi(X)||_F^2 = sum_c g(x_c)^2 sum_j a_j ||x_c||^{2j}``."""
        X = as_data_matrix(X)
        sq = X.column_sq_norms
        g2 = self.prefactor(X) ** 2
        with np.errstate(divide="ignore"):
            log_sq = np.log(sq)
        total = np.zeros_like(sq)
        for j, lc in enumerate(self.log_coeffs):
            if not np.isfinite(lc):
                continue
            if j == 0:
                total += math.exp(lc)
            else:
                total += np.exp(lc + j * log_sq)
        return float(math.fsum(g2 * total))

    def truncated_kernel(self, X, Y=None) -> np.ndarray:
        """``g(x) g(y) sum_{j <= q} a_j <x, y>^j``, i.e. the Gram matrix of the lifting."""
        X = as_data_matrix(X)
        Y = X if Y is None else as_data_matrix(Y)
        G = np.asarray((X.csc.T @ Y.csc).toarray())
        acc = np.zeros_like(G)
        power = np.ones_like(G)
        for j, lc in enumerate(self.log_coeffs):
            if j:
                power = power * G
            if np.isfinite(lc):
                acc += math.exp(lc) * power
        return self.prefactor(X)[:, None] * acc * self.prefactor(Y)[None, :]

    def kernel_matrix(self, X, Y=None) -> np.ndarray:
        """The untruncated kernel where it has a closed form, else the truncated one."""
        X = as_data_matrix(X)
        Y = X if Y is None else as_data_matrix(Y)
        if self.family == "gaussian":
            return gaussian_kernel_matrix(X, Y)
        G = np.asarray((X.csc.T @ Y.csc).toarray())
        if self.family == "polynomial":
            return G**self.q
        if self.family == "inverse_polynomial":
            return 1.0 / (2.0 - G)
        return self.truncated_kernel(X, Y)


def _check_degree(q: int) -> None:
    if int(q) != q or q < 0:
        raise InvalidArgumentError(f"degree must be a non-negative integer, got {q}")


def truncation_degree(r: float, n: int, safety: float = 1.0) -> int:
    """Smallest ``q`` with ``n e^r r^{q+1} / (q+1)! <= 1e-9``, scaled by ``safety``.

    ``r`` bounds the squared norms of the data; the bound controls the
    entrywise Taylor remainder of the Gaussian kernel.
    """
    if n < 1 or r < 0 or safety < 1:
        raise InvalidArgumentError("need n >= 1, r >= 0 and safety >= 1")
    if r == 0:
        return 0
    target = math.log(TRUNCATION_TOLERANCE)
    base = math.log(n) + r
    q = 0
    while base + (q + 1) * math.log(r) - math.lgamma(q + 2) > target:
        q += 1
    return int(math.ceil(q * safety))


def gaussian_spec_for_data(X, safety: float = 1.0, radius: float | None = None) -> TaylorKernelSpec:
    """Gaussian spec whose degree makes the truncation negligible on ``X``."""
    X = as_data_matrix(X)
    r = float(np.max(X.column_sq_norms)) if radius is None else float(radius)
    return TaylorKernelSpec.gaussian(truncation_degree(r, X.n_cols, safety), radius=r)


def gaussian_kernel_matrix(X, Y=None) -> np.ndarray:
    """``K_ij = exp(-||x_i - y_j||^2 / 2)``."""
    X = as_data_matrix(X)
    same = Y is None
    Y = X if same else as_data_matrix(Y)
    G = np.asarray((X.csc.T @ Y.csc).toarray())
    sq = X.column_sq_norms[:, None] + Y.column_sq_norms[None, :] - 2.0 * G
    K = np.exp(-0.5 * np.maximum(sq, 0.0))
    if same:
        K = 0.5 * (K + K.T)
        np.fill_diagonal(K, 1.0)
    return K


def lifting_dimension(d: int, q: int) -> int:
    return sum(d**j for j in range(q + 1))


def dense_lifting(X, spec: TaylorKernelSpec) -> np.ndarray:
    """Explicit ``D x n`` lifting with ``D = sum_{j<=q} d^j`` (zero blocks included)."""
    X = as_data_matrix(X)
    d, n = X.shape
    D = lifting_dimension(d, spec.q)
    if D * n > DENSE_LIFTING_LIMIT:
        raise ResourceLimitError(f"lifting of size {D}x{n} exceeds the dense limit")
    Xd = X.toarray()
    g = spec.prefactor(X)
    blocks = []
    power = np.ones((1, n))
    for j, lc in enumerate(spec.log_coeffs):
        if j:
            power = sla.khatri_rao(power, Xd)
        scale = math.exp(0.5 * lc) if np.isfinite(lc) else 0.0
        blocks.append(scale * power * g[None, :])
    return np.vstack(blocks)


def taylor_row_sampler(
    X, spec: TaylorKernelSpec, B, lam: float, s: int, config: SamplerConfig | None = None, round_index: int = 1
) -> SamplingMatrix:
    """One row-norm sampler for ``phi(X) (B^T B + lam I)^{-1/2}``.

    The returned matrix carries the embedded rows in ``.embedding``.
    """
    X = as_data_matrix(X)
    spec.check_radius(X)
    if s < 1:
        raise InvalidArgumentError("s must be positive")
    return TaylorRowSampler(X, spec, config).sample(B, lam, s, round_index)


def taylor_embed_rows(X, spec: TaylorKernelSpec, Pi: SamplingMatrix) -> np.ndarray:
    """``Z = Pi phi(X)`` evaluated from the sampled index tuples."""
    X = as_data_matrix(X)
    _check_compatible(spec, Pi)
    return embed_rows(X, spec, Pi)


def taylor_embed_out_of_sample(x_new, spec: TaylorKernelSpec, Pi: SamplingMatrix) -> np.ndarray:
    """``Pi phi(x_new)`` for one new point."""
    col = as_column_vector(x_new, Pi.d)
    _check_compatible(spec, Pi)
    return embed_rows(SparseDataMatrix.from_scipy(col), spec, Pi)[:, 0]


def _check_compatible(spec: TaylorKernelSpec, Pi: SamplingMatrix) -> None:
    if Pi.kernel is not None and Pi.kernel != spec:
        raise InvalidArgumentError("sampling matrix was built for a different kernel")
    if int(Pi.degrees.max()) > spec.q:
        raise InvalidArgumentError("sampling matrix uses blocks beyond the kernel's degree")


def taylor_embedding(
    X,
    spec: TaylorKernelSpec,
    lam: float,
    epsilon: float,
    mu: float,
    config: SamplerConfig | None = None,
) -> SamplingMatrix:
    """Full recursive sampling for a Taylor kernel; ``.embedding`` holds ``Z``."""
    X = as_data_matrix(X)
    spec.check_radius(X)
    sampler = TaylorRowSampler(X, spec, config)
    return recursive_leverage_sampling(
        sampler, spec.frobenius_sq(X), lam, epsilon, mu, X.n_cols, sampler.config
    )
