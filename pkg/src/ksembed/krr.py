"""Kernel ridge regression, exact and through a sampled embedding.

With training targets ``y``, the exact estimator solves
``(K + lam I) alpha = y`` and predicts ``f(x) = sum_j k(x_j, x) alpha_j``.
The approximate estimator replaces ``K`` by ``Z^T Z`` with ``Z = Pi phi(X)``
and works in the ``s``-dimensional primal: ``(Z Z^T + lam I) w = Z y`` and
``f(x) = <w, Pi phi(x)>``.

Under ``y = f* + noise`` (i.i.d. noise of variance ``sigma^2``) the risk
``E[n^-1 ||f(X) - f*(X)||^2]`` of the exact estimator has the closed form

    n^-1 lam^2 f^T (K + lam I)^-2 f + n^-1 sigma^2 tr(K^2 (K + lam I)^-2)

and is bounded by ``n^-1 lam f^T (K + lam I)^-1 f + n^-1 sigma^2 s_lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg as sla

from ksembed._rng import stream
from ksembed.errors import InvalidArgumentError, NumericalError
from ksembed.linalg import (
    as_data_matrix,
    check_psd,
    spectral_approx_check_gram,
    statistical_dimension,
)
from ksembed.sampling import SamplingMatrix
from ksembed.taylor import TaylorKernelSpec, taylor_embed_rows

JITTER_START = 1e-10
JITTER_RETRIES = 3


@dataclass(frozen=True, eq=False)
class KrrModel:
    """A fitted estimator.

    Attributes:
        mode: ``"exact"`` or ``"approximate"``.
        lam: the ridge parameter.
        coef: ``alpha`` (length ``n``) in exact mode, ``w`` (length ``s``) otherwise.
        fitted: predictions on the training points.
        X_train: training data, needed for exact out-of-sample predictions.
        kernel: kernel spec used for predictions on new points.
        sampler: the training sampling matrix (approximate mode).
        jitter: diagonal shift that was added to make the solve succeed.
        residual: ``||A coef - rhs|| / ||rhs||`` of the system actually solved.
    """

    mode: str
    lam: float
    coef: np.ndarray
    fitted: np.ndarray
    X_train: object = None
    kernel: TaylorKernelSpec | None = None
    sampler: SamplingMatrix | None = None
    jitter: float = 0.0
    residual: float = 0.0


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0 or not math.isfinite(lam):
        raise InvalidArgumentError(f"lambda must be positive and finite, got {lam}")
    return lam


def _spd_solve(A: np.ndarray, b: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Cholesky solve; on failure retry with a growing diagonal jitter."""
    jitter = 0.0
    for attempt in range(JITTER_RETRIES + 1):
        try:
            factor = sla.cho_factor(A + jitter * np.eye(A.shape[0]), lower=True)
            x = sla.cho_solve(factor, b)
            if np.all(np.isfinite(x)):
                return x, jitter
        except (np.linalg.LinAlgError, ValueError):
            pass
        jitter = lam * JITTER_START * 10.0**attempt
    raise NumericalError("system is not positive definite even after jitter", stage="cholesky")


def _relative_residual(A, x, b) -> float:
    nb = float(np.linalg.norm(b))
    r = float(np.linalg.norm(A @ x - b))
    return r / nb if nb > 0 else r


def fit_exact(K, y, lam: float, X=None, kernel: TaylorKernelSpec | None = None) -> KrrModel:
    """Solve ``(K + lam I) alpha = y``.

    ``X`` and ``kernel`` are optional and only needed to predict on new points.
    """
    lam = _check_lambda(lam)
    K = check_psd(K)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != K.shape[0]:
        raise InvalidArgumentError(f"y has length {y.size}, K is {K.shape[0]}x{K.shape[0]}")
    A = K + lam * np.eye(K.shape[0])
    alpha, jitter = _spd_solve(A, y, lam)
    X = None if X is None else as_data_matrix(X)
    if X is not None and X.n_cols != y.size:
        raise InvalidArgumentError("X must have one column per target")
    return KrrModel(
        "exact", lam, alpha, K @ alpha, X, kernel, None, jitter, _relative_residual(A, alpha, y)
    )


def fit_approx(Z, y, lam: float, Pi: SamplingMatrix | None = None, kernel: TaylorKernelSpec | None = None) -> KrrModel:
    """Solve ``(Z Z^T + lam I_s) w = Z y``.

    ``Pi`` (and its kernel, or ``kernel``) are needed to embed new points.
    """
    lam = _check_lambda(lam)
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[None, :]
    if not np.all(np.isfinite(Z)):
        raise InvalidArgumentError("Z has non-finite entries")
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != Z.shape[1]:
        raise InvalidArgumentError(f"y has length {y.size}, Z has {Z.shape[1]} columns")
    A = Z @ Z.T + lam * np.eye(Z.shape[0])
    rhs = Z @ y
    w, jitter = _spd_solve(A, rhs, lam)
    if kernel is None and Pi is not None:
        kernel = Pi.kernel
    return KrrModel(
        "approximate", lam, w, Z.T @ w, None, kernel, Pi, jitter, _relative_residual(A, w, rhs)
    )


def predict(model: KrrModel, X_test) -> np.ndarray:
    """Predictions at the columns of ``X_test``."""
    X_test = as_data_matrix(X_test)
    if model.kernel is None:
        raise InvalidArgumentError("the model has no kernel; only its training predictions are available")
    if model.mode == "exact":
        if model.X_train is None:
            raise InvalidArgumentError("exact model was fitted without training data")
        if X_test.n_rows != model.X_train.n_rows:
            raise InvalidArgumentError(f"test data has d={X_test.n_rows}, training data d={model.X_train.n_rows}")
        return model.kernel.kernel_matrix(X_test, model.X_train) @ model.coef
    if model.sampler is None:
        raise InvalidArgumentError("approximate model was fitted without a sampling matrix")
    Z_test = taylor_embed_rows(X_test, model.kernel, model.sampler)
    return Z_test.T @ model.coef


def rmse(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if predictions.shape != targets.shape:
        raise InvalidArgumentError("predictions and targets differ in length")
    return float(np.sqrt(np.mean((predictions - targets) ** 2)))


def empirical_risk(predictions, f_star) -> float:
    """``n^-1 ||pred - f*||^2``, averaged over replicate rows if ``predictions`` is 2-D."""
    pred = np.asarray(predictions, dtype=np.float64)
    f = np.asarray(f_star, dtype=np.float64).ravel()
    if pred.shape[-1] != f.size or pred.ndim > 2:
        raise InvalidArgumentError("predictions and f_star differ in length")
    return float(np.mean((pred - f) ** 2))


def _spectrum(K):
    ev, V = np.linalg.eigh(check_psd(K))
    return np.clip(ev, 0.0, None), V


def exact_risk(K, f_star, sigma_sq: float, lam: float) -> float:
    """Closed-form bias plus variance of exact KRR."""
    lam = _check_lambda(lam)
    ev, V = _spectrum(K)
    f = np.asarray(f_star, dtype=np.float64).ravel()
    n = ev.size
    coords = V.T @ f
    bias = lam**2 * np.sum(coords**2 / (ev + lam) ** 2)
    variance = sigma_sq * np.sum(ev**2 / (ev + lam) ** 2)
    return float((bias + variance) / n)


def risk_upper_bound(K, f_star, sigma_sq: float, lam: float) -> float:
    """``n^-1 lam f^T (K + lam I)^-1 f + n^-1 sigma^2 s_lam(K)``."""
    lam = _check_lambda(lam)
    ev, V = _spectrum(K)
    f = np.asarray(f_star, dtype=np.float64).ravel()
    coords = V.T @ f
    bias = lam * np.sum(coords**2 / (ev + lam))
    return float((bias + sigma_sq * statistical_dimension(ev, lam)) / ev.size)


def simulate_risk(K, f_star, sigma_sq: float, lam: float, draws: int = 200, seed: int = 0) -> tuple[float, float]:
    """Monte-Carlo risk of exact KRR over ``draws`` noise vectors; returns (mean, standard error)."""
    K = check_psd(K)
    f = np.asarray(f_star, dtype=np.float64).ravel()
    n = f.size
    noise = math.sqrt(sigma_sq) * stream(seed, "krr_noise").standard_normal((draws, n))
    A = K + _check_lambda(lam) * np.eye(n)
    factor = sla.cho_factor(A, lower=True)
    fitted = (K @ sla.cho_solve(factor, (f + noise).T)).T
    risks = np.mean((fitted - f) ** 2, axis=1)
    return float(risks.mean()), float(risks.std(ddof=1) / math.sqrt(draws))


class RiskBound(NamedTuple):
    lhs: float
    rhs: float
    holds: bool


def risk_bound_check(K, K_tilde, f_star, sigma_sq: float, lam: float, epsilon: float) -> RiskBound:
    """Compare the risk upper bound on ``K_tilde`` with the one on ``K``.

    ``lhs`` is the bound evaluated on ``K_tilde``; ``rhs`` is
    ``(1-eps)^-1 * bound(K) + eps/(1+eps) * rank(K_tilde)/n * sigma^2``.

    Raises:
        InvalidArgumentError: ``K_tilde`` is not an ``(eps, lam)``-spectral
            approximation of ``K``, or ``||K||_op < 1``.
    """
    K = check_psd(K)
    K_tilde = check_psd(K_tilde, "K_tilde")
    passed, dev = spectral_approx_check_gram(K, K_tilde, lam, epsilon)
    if not passed:
        raise InvalidArgumentError(f"K_tilde is not a spectral approximation of K (deviation {dev:.3g})")
    if np.linalg.norm(K, 2) < 1.0:
        raise InvalidArgumentError("the bound assumes ||K||_op >= 1")
    n = K.shape[0]
    rank = int(np.linalg.matrix_rank(K_tilde, hermitian=True))
    lhs = risk_upper_bound(K_tilde, f_star, sigma_sq, lam)
    rhs = risk_upper_bound(K, f_star, sigma_sq, lam) / (1 - epsilon) + epsilon / (1 + epsilon) * rank / n * sigma_sq
    return RiskBound(lhs, rhs, bool(lhs <= rhs * (1 + 1e-9)))
