"""Quick oracle batteries behind ``ksembed verify``.

Each check returns ``(name, passed, detail)``.  The batteries are small
versions of the test-suite experiments, sized to finish in well under a
minute each.
"""

from __future__ import annotations

import itertools

import numpy as np

from ksembed._rng import stream
from ksembed.krr import exact_risk, fit_approx, fit_exact, risk_bound_check, simulate_risk
from ksembed.linalg import spectral_approx_check, statistical_dimension
from ksembed.oracles import poly_exact_distribution, taylor_exact_distribution
from ksembed.poly import poly_embedding, poly_row_sampler, polynomial_kernel_matrix
from ksembed.sampling import SamplerConfig, verify_row_norm_sampler
from ksembed.taylor import TaylorKernelSpec, taylor_row_sampler

SUITES = ("samplers", "spectral", "krr")


def _unit_columns(rng, d, n):
    X = rng.standard_normal((d, n))
    return X / np.linalg.norm(X, axis=0) * rng.uniform(0.3, 1.0, n)


def sampler_checks(draws: int = 50_000, seed: int = 0):
    out = []
    for k, (d, n, q) in enumerate(itertools.product((2, 3), (3, 4), (1, 2, 3))):
        rng = stream(seed, "verify_samplers", k)
        X = rng.standard_normal((d, n))
        B = rng.standard_normal((2, n))
        lam = 0.5
        Pi = poly_row_sampler(X, q, B, lam, draws, SamplerConfig(seed=seed + k))
        ok, worst = verify_row_norm_sampler(
            Pi.empirical_frequencies(), poly_exact_distribution(X, q, B, lam), 0.25, draws
        )
        out.append((f"poly d={d} n={n} q={q}", ok and Pi.all_weights_consistent(), f"worst ratio {worst:.3f}"))
        if q >= 2:
            Xg = _unit_columns(rng, d, n)
            spec = TaylorKernelSpec.gaussian(q)
            Pi = taylor_row_sampler(Xg, spec, B, lam, draws, SamplerConfig(seed=seed + k))
            ok, worst = verify_row_norm_sampler(
                Pi.empirical_frequencies(), taylor_exact_distribution(Xg, spec, B, lam), 0.25, draws
            )
            out.append((f"gaussian d={d} n={n} q={q}", ok and Pi.all_weights_consistent(), f"worst ratio {worst:.3f}"))
    return out


def lambda_for_stat_dim(eigenvalues, target: float) -> float:
    """``lam`` with ``s_lam = target`` (bisection on a log scale)."""
    lo, hi = 1e-12 * max(eigenvalues.max(), 1e-300), 1e12 * max(eigenvalues.max(), 1.0)
    for _ in range(200):
        mid = np.sqrt(lo * hi)
        if statistical_dimension(eigenvalues, mid) > target:
            lo = mid
        else:
            hi = mid
    return float(np.sqrt(lo * hi))


def spectral_checks(runs: int = 5, seed: int = 0):
    rng = stream(seed, "verify_spectral")
    X = rng.standard_normal((6, 64)) / np.sqrt(6)
    K = polynomial_kernel_matrix(X, 2)
    ev = np.linalg.eigvalsh(K)
    lam = lambda_for_stat_dim(ev, 4.0)
    mu = statistical_dimension(ev, lam)
    out = []
    for r in range(runs):
        Pi = poly_embedding(X, 2, lam, 1 / 3, mu, SamplerConfig(seed=seed + r))
        ok, dev = spectral_approx_check(K, Pi.embedding, lam, 1 / 3)
        out.append((f"poly q=2 run {r}", ok, f"s={Pi.s} rounds={Pi.rounds} deviation={dev:.3g}"))
    return out


def krr_checks(seed: int = 0):
    rng = stream(seed, "verify_krr")
    n = 40
    X = rng.standard_normal((3, n))
    K = polynomial_kernel_matrix(X, 2) + 1e-8 * np.eye(n)
    y = rng.standard_normal(n)
    lam = 0.5
    Z = np.linalg.cholesky(K).T
    exact = fit_exact(K, y, lam)
    approx = fit_approx(Z, y, lam)
    rel = np.linalg.norm(exact.fitted - approx.fitted) / np.linalg.norm(exact.fitted)
    out = [("cholesky embedding matches exact KRR", rel <= 1e-6, f"relative difference {rel:.2e}")]
    f = np.sin(X[0])
    sigma_sq = 0.25
    mean, se = simulate_risk(K, f, sigma_sq, lam, draws=200, seed=seed)
    closed = exact_risk(K, f, sigma_sq, lam)
    out.append(("Monte-Carlo risk matches closed form", abs(mean - closed) <= 3 * se, f"{mean:.4g} vs {closed:.4g} (se {se:.2g})"))
    lhs, rhs, holds = risk_bound_check(K, Z.T @ Z, f, sigma_sq, lam, 1 / 3)
    out.append(("risk bound on identical kernels", holds, f"lhs {lhs:.4g} <= rhs {rhs:.4g}"))
    return out


def run_suite(name: str, **kwargs):
    if name == "samplers":
        return sampler_checks(**kwargs)
    if name == "spectral":
        return spectral_checks(**kwargs)
    if name == "krr":
        return krr_checks(**kwargs)
    raise ValueError(f"unknown suite {name!r}")
