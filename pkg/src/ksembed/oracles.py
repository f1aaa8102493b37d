"""Brute-force references for tests and verification.

Everything here materializes liftings or sketches explicitly and is meant
for tiny inputs only; size guards raise :class:`ResourceLimitError`.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from ksembed._rng import child_seed, stream
from ksembed.errors import InvalidArgumentError, ResourceLimitError
from ksembed.linalg import as_data_matrix, ridge_leverage_scores
from ksembed.sampling import (
    FeatureIndex,
    SamplerConfig,
    SamplingMatrix,
    recursive_leverage_sampling,
    sampling_matrix_from_arrays,
)
from ksembed.sketch import SketchTree, dense_tensor_power, evaluate_leaf_inputs
from ksembed.taylor import TaylorKernelSpec, dense_lifting

ORACLE_LIMIT = 10**7


def _guard(rows: int, cols: int) -> None:
    if rows * cols > ORACLE_LIMIT:
        raise ResourceLimitError(f"oracle input {rows}x{cols} exceeds {ORACLE_LIMIT} entries")


def poly_lifting(X, q: int) -> np.ndarray:
    """Explicit ``X^{(x)q}`` (``d^q x n``)."""
    X = as_data_matrix(X)
    d, n = X.shape
    _guard(d**q, n)
    Xd = X.toarray()
    return np.column_stack([dense_tensor_power(Xd[:, c], q) for c in range(n)])


def poly_feature_labels(d: int, q: int) -> list[FeatureIndex]:
    return [FeatureIndex(q, idx) for idx in itertools.product(range(d), repeat=q)]


def taylor_feature_labels(d: int, q: int) -> list[FeatureIndex]:
    return [FeatureIndex(w, idx) for w in range(q + 1) for idx in itertools.product(range(d), repeat=w)]


def rotated_lifting(Phi, B, lam: float) -> np.ndarray:
    """``Phi (B^T B + lam I)^{-1/2}`` through a dense eigendecomposition."""
    Phi = np.asarray(Phi, dtype=np.float64)
    D, n = Phi.shape
    _guard(D, n)
    if not lam > 0:
        raise InvalidArgumentError("lambda must be positive")
    B = np.asarray(B, dtype=np.float64).reshape(-1, n)
    evals, evecs = np.linalg.eigh(B.T @ B + lam * np.eye(n))
    inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return Phi @ inv_sqrt


def exact_row_norm_probabilities(Phi, B, lam: float) -> np.ndarray:
    R = rotated_lifting(Phi, B, lam)
    mass = np.sum(R**2, axis=1)
    total = mass.sum()
    if not total > 0:
        raise InvalidArgumentError("the rotated lifting is identically zero")
    return mass / total


def exact_row_norm_distribution(Phi, B, lam: float, labels=None) -> dict:
    """Map each row label to its squared-row-norm share of ``Phi (B^T B + lam I)^{-1/2}``.

    ``labels`` defaults to the row numbers.
    """
    probs = exact_row_norm_probabilities(Phi, B, lam)
    labels = range(probs.size) if labels is None else labels
    labels = list(labels)
    if len(labels) != probs.size:
        raise InvalidArgumentError("one label per row of Phi is required")
    return dict(zip(labels, probs.tolist()))


def poly_exact_distribution(X, q: int, B, lam: float) -> dict:
    X = as_data_matrix(X)
    return exact_row_norm_distribution(poly_lifting(X, q), B, lam, poly_feature_labels(X.n_rows, q))


def taylor_exact_distribution(X, spec: TaylorKernelSpec, B, lam: float) -> dict:
    """Oracle target over the lifting's features (zero-coefficient blocks included with mass 0)."""
    X = as_data_matrix(X)
    return exact_row_norm_distribution(
        dense_lifting(X, spec), B, lam, taylor_feature_labels(X.n_rows, spec.q)
    )


def explicit_sketch_matrix(tree: SketchTree) -> np.ndarray:
    """Materialize the ``m' x d^q`` matrix of a sketch tree (columns in ``np.kron`` order)."""
    d, q = tree.d, tree.q
    _guard(tree.final_dim, d**q)
    digits = np.array(list(itertools.product(range(d), repeat=q)), dtype=np.int64).reshape(-1, q)
    eye = np.eye(d)
    return evaluate_leaf_inputs(tree, [eye[:, digits[:, a]] for a in range(q)])


class DenseRowSampler:
    """Exact row-norm sampling of an explicit ``Phi (B^T B + lam I)^{-1/2}``.

    Samples are labelled ``FeatureIndex(1, (row,))`` on a ``D``-row lifting.
    Callable with the recursive driver's row-sampler contract.
    """

    def __init__(self, Phi, seed: int = 0):
        self.Phi = np.asarray(Phi, dtype=np.float64)
        _guard(*self.Phi.shape)
        self.seed = seed

    def __call__(self, B, lam: float, s: int, round_index: int = 1):
        Pi = self.sample(B, lam, s, round_index)
        return Pi, Pi.embedding

    def sample(self, B, lam: float, s: int, round_index: int = 1) -> SamplingMatrix:
        probs = exact_row_norm_probabilities(self.Phi, B, lam)
        rng = stream(child_seed(self.seed, "dense_row_sampler", round_index), "draws")
        rows = rng.choice(probs.size, size=s, p=probs)
        Pi = sampling_matrix_from_arrays(
            self.Phi.shape[0], np.ones(s, dtype=np.int64), rows[:, None], probs[rows]
        )
        return Pi.replace(embedding=Pi.weights[:, None] * self.Phi[rows])


def dense_pipeline(
    Phi, lam: float, epsilon: float, mu: float, config: SamplerConfig | None = None
) -> SamplingMatrix:
    """The recursive driver with exact row-norm sampling in every round."""
    config = config or SamplerConfig()
    Phi = np.asarray(Phi, dtype=np.float64)
    return recursive_leverage_sampling(
        DenseRowSampler(Phi, config.seed),
        float(np.sum(Phi**2)),
        lam,
        epsilon,
        mu,
        Phi.shape[1],
        config,
    )


def leverage_score_sampler(Phi, lam: float, s: int, seed: int = 0) -> tuple[SamplingMatrix, np.ndarray]:
    """``s`` i.i.d. rows drawn proportionally to exact ridge leverage scores.

    Returns the sampling matrix and the embedding ``Pi Phi``.
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    _guard(*Phi.shape)
    scores = ridge_leverage_scores(Phi, lam)
    probs = scores / scores.sum()
    rows = stream(seed, "leverage_sampler").choice(probs.size, size=s, p=probs)
    Pi = sampling_matrix_from_arrays(Phi.shape[0], np.ones(s, dtype=np.int64), rows[:, None], probs[rows])
    return Pi, Pi.weights[:, None] * Phi[rows]


def lemma_sample_size(n: int, stat_dim: float, epsilon: float, alpha: float = 0.25) -> int:
    """``ceil(4 log2(n) s_lambda / (alpha eps^2))`` rows for exact leverage sampling."""
    return math.ceil(4.0 * math.log2(n) * stat_dim / (alpha * epsilon**2))


def random_psd(n: int, seed: int, decay: float = 1.0) -> np.ndarray:
    """Random PSD matrix with a geometrically decaying spectrum."""
    rng = stream(seed, "random_psd", n)
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    evals = np.exp(-decay * np.arange(n) / max(n / 8, 1)) * n
    return (Q * evals) @ Q.T
