"""Row-norm sampling and embeddings for the polynomial kernel ``<x, y>^q``.

The lifting is ``X^{(x)q}``.  Its row ``(i_1, ..., i_q)`` holds the entries
``prod_a X[i_a, c]``.  Sampling draws a JL column ``j`` of
``(B^T B + lam I)^{-1/2} H`` by its sketched mass, then fixes the indices one
at a time.  Each step first picks a hash bucket of data rows through
Gaussian-compressed bucket norms, then a row inside the bucket.  The
reported probability of a sample is recomputed exactly by replaying those
choices under every JL column, so the weights ``1/sqrt(s p)`` are always
consistent with how the sample was drawn.
"""

from __future__ import annotations

import numpy as np

from ksembed._rowsampler import TaylorRowSampler, embed_rows
from ksembed.errors import InvalidArgumentError
from ksembed.linalg import SparseDataMatrix, as_column_vector, as_data_matrix
from ksembed.sampling import SamplerConfig, SamplingMatrix, recursive_leverage_sampling
from ksembed.taylor import TaylorKernelSpec


def polynomial_kernel_matrix(X, q: int, Y=None) -> np.ndarray:
    """``K_ij = <x_i, y_j>^q``."""
    X = as_data_matrix(X)
    Y = X if Y is None else as_data_matrix(Y)
    return np.asarray((X.csc.T @ Y.csc).toarray()) ** q


def poly_row_sampler(
    X, q: int, B, lam: float, s: int, config: SamplerConfig | None = None, round_index: int = 1
) -> SamplingMatrix:
    """Rank-``s`` row-norm sampler for ``X^{(x)q} (B^T B + lam I)^{-1/2}``.

    Raises:
        InvalidArgumentError: ``q < 1`` or ``s < 1``.
        DegenerateInputError: the sketched lifting has no mass (e.g. ``X = 0``).
        NumericalError: a stage distribution underflowed; ``.stage`` names it.
    """
    if int(q) != q or q < 1:
        raise InvalidArgumentError(f"q must be a positive integer, got {q}")
    if s < 1:
        raise InvalidArgumentError("s must be positive")
    X = as_data_matrix(X)
    return TaylorRowSampler(X, TaylorKernelSpec.polynomial(q), config).sample(B, lam, s, round_index)


def _spec_of(Pi: SamplingMatrix) -> TaylorKernelSpec:
    q = Pi.max_degree
    if q < 1 or np.any(Pi.degrees != q):
        raise InvalidArgumentError("not a polynomial-kernel sampling matrix")
    return TaylorKernelSpec.polynomial(q)


def poly_embed_rows(X, Pi: SamplingMatrix) -> np.ndarray:
    """``Z[l, c] = weight_l * prod_a X[i_a, c]``."""
    return embed_rows(as_data_matrix(X), _spec_of(Pi), Pi)


def poly_embed_out_of_sample(x_new, Pi: SamplingMatrix) -> np.ndarray:
    """Embedding of one new point with the training sampler."""
    col = as_column_vector(x_new, Pi.d)
    return embed_rows(SparseDataMatrix.from_scipy(col), _spec_of(Pi), Pi)[:, 0]


def poly_frobenius_sq(X, q: int) -> float:
    """``||X^{(x)q}||_F^2 = sum_c ||x_c||^{2q}``."""
    X = as_data_matrix(X)
    return float(np.sum(X.column_sq_norms**q))


def poly_embedding(
    X, q: int, lam: float, epsilon: float, mu: float, config: SamplerConfig | None = None
) -> SamplingMatrix:
    """Recursive sampling for the degree-``q`` polynomial kernel; ``.embedding`` is ``Z``."""
    X = as_data_matrix(X)
    sampler = TaylorRowSampler(X, TaylorKernelSpec.polynomial(q), config)
    return recursive_leverage_sampling(
        sampler, poly_frobenius_sq(X, q), lam, epsilon, mu, X.n_cols, sampler.config
    )
