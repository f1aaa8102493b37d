"""Generic recursive ridge-leverage sampling and row-norm sampler checks.

The driver in :func:`recursive_leverage_sampling` only talks to a row
sampler through a small contract: given the embedding ``B`` of the previous
round, a ridge ``lam`` and a sample count ``s``, it returns a
:class:`SamplingMatrix` for ``Phi (B^T B + lam I)^{-1/2}`` together with the
embedded rows ``S Phi`` that become the next ``B``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace as _replace
from functools import cached_property
from typing import Callable, Mapping, Protocol

import numpy as np

from ksembed.errors import InvalidArgumentError


@dataclass(frozen=True, order=True)
class FeatureIndex:
    """One coordinate of a (possibly block-structured) lifting.

    ``block_degree`` is the Taylor block ``w``; the polynomial kernel always
    uses ``w = q``.  ``indices`` is the tuple ``(i_1, ..., i_w)``.
    """

    block_degree: int
    indices: tuple[int, ...]

    def __post_init__(self):
        if len(self.indices) != self.block_degree:
            raise InvalidArgumentError(
                f"index tuple length {len(self.indices)} != block degree {self.block_degree}"
            )

    def tuple_code(self, d: int) -> int:
        """Row-major code of ``indices`` (leftmost slowest)."""
        code = 0
        for i in self.indices:
            if not 0 <= i < d:
                raise InvalidArgumentError(f"index {i} outside [0, {d})")
            code = code * d + i
        return code

    def flat_offset(self, d: int) -> int:
        """Position in the stacked lifting ``[block 0; block 1; ...]``."""
        return block_offset(d, self.block_degree) + self.tuple_code(d)


def block_offset(d: int, w: int) -> int:
    """Start of block ``w`` in a lifting whose block ``j`` has ``d^j`` rows."""
    return w if d == 1 else (d**w - 1) // (d - 1)


@dataclass(frozen=True)
class WeightedSample:
    index: FeatureIndex
    weight: float
    claimed_probability: float


def weight_consistency_check(sample: WeightedSample, s: int) -> bool:
    """True iff ``weight == 1/sqrt(s * claimed_probability)`` to 1e-9 relative."""
    p = sample.claimed_probability
    if not (p > 0 and s > 0):
        return False
    expected = 1.0 / math.sqrt(s * p)
    return abs(sample.weight - expected) <= 1e-9 * expected


@dataclass(frozen=True, eq=False)
class SamplingMatrix:
    """``s`` weighted lifted-feature rows, stored column-wise.

    ``indices`` is ``s x max_degree``, padded with ``-1`` past each row's
    block degree.  ``embedding`` optionally carries ``S Phi`` for the rows,
    as produced by the sampler that built this matrix.
    """

    d: int
    degrees: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    probabilities: np.ndarray
    kernel: object = None
    rounds: int = 1
    degenerate: bool = False
    lambdas: tuple[float, ...] = ()
    embedding: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        s = self.degrees.shape[0]
        if s < 1:
            raise InvalidArgumentError("a sampling matrix needs at least one row")
        if self.indices.shape[0] != s or self.weights.shape != (s,) or self.probabilities.shape != (s,):
            raise InvalidArgumentError("sampling matrix fields have inconsistent lengths")
        for arr in (self.degrees, self.indices, self.weights, self.probabilities):
            arr.setflags(write=False)

    @property
    def s(self) -> int:
        return int(self.degrees.shape[0])

    @property
    def max_degree(self) -> int:
        return int(self.indices.shape[1])

    def feature_index(self, row: int) -> FeatureIndex:
        w = int(self.degrees[row])
        return FeatureIndex(w, tuple(int(i) for i in self.indices[row, :w]))

    @cached_property
    def samples(self) -> list[WeightedSample]:
        return [
            WeightedSample(self.feature_index(r), float(self.weights[r]), float(self.probabilities[r]))
            for r in range(self.s)
        ]

    def flat_offsets(self) -> np.ndarray:
        """Row of the stacked lifting hit by each sample."""
        d = self.d
        out = np.array([block_offset(d, int(w)) for w in self.degrees], dtype=np.int64)
        for a in range(self.max_degree):
            active = self.degrees > a
            out[active] = out[active] + self.indices[active, a] * np.power(
                d, self.degrees[active] - a - 1, dtype=np.int64
            )
        return out

    def empirical_frequencies(self) -> dict[FeatureIndex, float]:
        """Fraction of rows landing on each distinct feature."""
        keys = np.column_stack([self.degrees, self.indices])
        uniq, counts = np.unique(keys, axis=0, return_counts=True)
        out = {}
        for row, c in zip(uniq, counts):
            w = int(row[0])
            out[FeatureIndex(w, tuple(int(i) for i in row[1 : 1 + w]))] = c / self.s
        return out

    def all_weights_consistent(self) -> bool:
        expected = 1.0 / np.sqrt(self.s * self.probabilities)
        return bool(np.all(np.abs(self.weights - expected) <= 1e-9 * expected))

    def replace(self, **changes) -> "SamplingMatrix":
        return _replace(self, **changes)


def sampling_matrix_from_arrays(
    d: int, degrees, index_rows, probabilities, s: int | None = None, kernel=None, embedding=None
) -> SamplingMatrix:
    """Assemble a :class:`SamplingMatrix` with weights ``1/sqrt(s p)``."""
    degrees = np.asarray(degrees, dtype=np.int64)
    probabilities = np.asarray(probabilities, dtype=np.float64)
    s = degrees.shape[0] if s is None else s
    width = int(degrees.max(initial=0))
    indices = np.full((degrees.shape[0], width), -1, dtype=np.int64)
    for r, idx in enumerate(index_rows):
        indices[r, : len(idx)] = idx
    if np.any(probabilities <= 0) or np.any(probabilities > 1 + 1e-12):
        raise InvalidArgumentError("claimed probabilities must lie in (0, 1]")
    weights = 1.0 / np.sqrt(s * probabilities)
    return SamplingMatrix(d, degrees, indices, weights, probabilities, kernel=kernel, embedding=embedding)


@dataclass(frozen=True)
class RidgeSchedule:
    """Ridge sequence ``lambda_t = lambda_0 / 2^t`` for ``t = 0..T``."""

    lambda_0: float
    T: int
    target: float

    @classmethod
    def create(cls, frobenius_sq: float, epsilon: float, lam: float) -> "RidgeSchedule":
        if not frobenius_sq > 0:
            raise InvalidArgumentError("the lifting's squared Frobenius norm must be positive")
        lam0 = frobenius_sq / epsilon
        ratio = lam0 / lam
        if ratio <= 1:
            return cls(lam0, 0, lam)
        T = max(0, math.ceil(math.log2(ratio)))
        # guard the ceiling against log2 rounding at exact powers of two
        while T > 0 and 2.0 ** (T - 1) >= ratio:
            T -= 1
        while 2.0**T < ratio:
            T += 1
        return cls(lam0, T, lam)

    def lam(self, t: int) -> float:
        return self.lambda_0 / 2.0**t

    @property
    def rounds(self) -> int:
        """Number of row-sampler calls; a zero-step schedule still samples once."""
        return max(self.T, 1)


@dataclass(frozen=True)
class SamplerConfig:
    """Constants that the algorithms leave symbolic.

    ``C`` defaults to ``4 / alpha``.  Sketch widths follow
    ``d' = C1 q log2 n``, ``m' = C2 q^2 log2 n`` and ``n' = C3 q^2 log2 n``,
    clamped to ``[min_*, max_*]``.  ``sample_count`` overrides the
    ``C mu eps^-2 log2 n`` rule when set.  ``share_sketches`` reuses the
    data-independent sketches across rounds of the recursive driver.
    """

    C: float | None = None
    C1: float = 1.0
    C2: float = 1.0
    C3: float = 1.0
    osnap_sparsity: int = 8
    alpha: float = 0.25
    seed: int = 0
    min_jl_dim: int = 32
    min_sketch_dim: int = 64
    min_bucket_dim: int = 32
    max_jl_dim: int = 256
    max_sketch_dim: int = 512
    max_bucket_dim: int = 256
    sketch_internal_dim: int | None = None
    max_internal_dim: int = 2048
    sample_count: int | None = None
    share_sketches: bool = False

    def __post_init__(self):
        for name in ("C1", "C2", "C3"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")
        if self.C is not None and not self.C > 0:
            raise InvalidArgumentError("C must be positive")
        if not 0 < self.alpha <= 1:
            raise InvalidArgumentError("alpha must lie in (0, 1]")
        if self.osnap_sparsity < 1:
            raise InvalidArgumentError("osnap_sparsity must be at least 1")
        for lo, hi in (
            ("min_jl_dim", "max_jl_dim"),
            ("min_sketch_dim", "max_sketch_dim"),
            ("min_bucket_dim", "max_bucket_dim"),
        ):
            if not 1 <= getattr(self, lo) <= getattr(self, hi):
                raise InvalidArgumentError(f"need 1 <= {lo} <= {hi}")
        if self.sample_count is not None and self.sample_count < 1:
            raise InvalidArgumentError("sample_count must be positive")

    @property
    def sample_constant(self) -> float:
        return 4.0 / self.alpha if self.C is None else float(self.C)

    def sample_size(self, mu: float, epsilon: float, n: int) -> int:
        if self.sample_count is not None:
            return int(self.sample_count)
        return max(1, math.ceil(self.sample_constant * mu / epsilon**2 * math.log2(n)))

    def replace(self, **changes) -> "SamplerConfig":
        return _replace(self, **changes)


class RowSampler(Protocol):
    def __call__(self, B: np.ndarray, lam: float, s: int, round_index: int) -> tuple[SamplingMatrix, np.ndarray]:
        ...


def recursive_leverage_sampling(
    row_sampler: Callable[[np.ndarray, float, int, int], tuple[SamplingMatrix, np.ndarray]],
    frobenius_sq: float,
    lam: float,
    epsilon: float,
    mu: float,
    n: int,
    config: SamplerConfig | None = None,
) -> SamplingMatrix:
    """Refine a row-norm sampler over a halving ridge schedule.

    Round ``t`` samples ``Phi (B^T B + lambda_{t-1} I)^{-1/2}`` with ``B`` the
    previous round's embedding (empty in the first round).  The returned
    matrix carries the final embedding in ``.embedding``, the number of
    rounds run and the ridge values used.

    Raises:
        InvalidArgumentError: ``epsilon`` outside ``(0, 1/3]`` or other bad sizes.
    """
    config = config or SamplerConfig()
    epsilon = float(epsilon)
    if not 0 < epsilon <= 1.0 / 3.0 + 1e-12:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1/3], got {epsilon}")
    if not lam > 0 or not mu > 0 or n < 1:
        raise InvalidArgumentError("lambda and mu must be positive and n at least 1")
    s = config.sample_size(mu, epsilon, n)
    schedule = RidgeSchedule.create(frobenius_sq, epsilon, lam)
    B = np.zeros((0, n))
    used: list[float] = []
    Pi = None
    for t in range(1, schedule.rounds + 1):
        lam_t = schedule.lam(t - 1)
        Pi, Z = row_sampler(B, lam_t, s, t)
        used.append(lam_t)
        if not np.any(Z):
            warnings.warn(
                f"round {t} produced an all-zero embedding; stopping early", RuntimeWarning, stacklevel=2
            )
            return Pi.replace(rounds=t, degenerate=True, lambdas=tuple(used), embedding=Z)
        B = Z
    return Pi.replace(rounds=schedule.rounds, lambdas=tuple(used), embedding=B)


def verify_row_norm_sampler(
    empirical: Mapping, exact_distribution: Mapping, alpha: float, N: int
) -> tuple[bool, float]:
    """Check empirical draw frequencies against a row-norm target.

    Every index with exact probability ``e >= 50/N`` must satisfy
    ``f >= alpha e - 3 sqrt(e/N)``.  Returns ``(passed, worst_ratio)`` with
    ``worst_ratio = min f/e`` over the tested indices (``inf`` if none).

    Raises:
        InvalidArgumentError: mismatched supports, a target that does not sum
            to one, or ``N < 10^4``.
    """
    if N < 10**4:
        raise InvalidArgumentError(f"need at least 10^4 draws, got {N}")
    total = math.fsum(float(v) for v in exact_distribution.values())
    if abs(total - 1.0) > 1e-9:
        raise InvalidArgumentError(f"exact distribution sums to {total}, not 1")
    extra = set(empirical) - set(exact_distribution)
    if extra:
        raise InvalidArgumentError(f"{len(extra)} empirical indices lie outside the exact support")
    passed, worst = True, math.inf
    for key, e in exact_distribution.items():
        e = float(e)
        if e < 50.0 / N:
            continue
        f = float(empirical.get(key, 0.0))
        worst = min(worst, f / e)
        if f < alpha * e - 3.0 * math.sqrt(e / N):
            passed = False
    return passed, worst
