"""Shared engine behind the polynomial and Taylor-series row samplers.

The polynomial sampler is the special case of a Taylor lifting whose only
nonzero coefficient sits at degree ``q`` with a unit prefactor, so both
public samplers run this code.

Notation follows the module docstrings of :mod:`ksembed.poly` and
:mod:`ksembed.taylor`.  ``P[k]`` sketches ``X^{(x)(q-k)} (x) E_1^{(x)k}``; a
walk of length ``w`` uses ``P[a + q - w]`` at stage ``a``.  The stage
quantities depend on the walk only through ``(prefix, k)`` and are
evaluated for every JL column ``j`` at once.  That one table serves the
forward walk and the replay that computes the exact draw probability of a
realized index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ksembed._rng import child_seed, stream
from ksembed.errors import DegenerateInputError, InvalidArgumentError, NumericalError
from ksembed.linalg import SparseDataMatrix, as_data_matrix, gaussian_matrix, regularized_inv_sqrt_apply
from ksembed.sampling import SamplerConfig, SamplingMatrix
from ksembed.sketch import build_sketch_tree, default_internal_dim, sketch_matrix_family

# Upper bound on elements of one stage-table work buffer (support x d' x m').
_TABLE_CHUNK = 1 << 22
# Per-row Python overhead, in units of one element of the column-expanded buffer.
_ROW_LOOP_COST = 20_000


@dataclass(frozen=True)
class SketchDims:
    jl: int  # d'
    sketch: int  # m'
    bucket: int  # n'
    internal: int  # s_int


def sketch_dims(q: int, n: int, config: SamplerConfig) -> SketchDims:
    """Clamp the width formulas of the sampler to the configured range."""
    qe = max(q, 1)
    logn = math.log2(max(n, 2))

    def clamp(value: float, lo: int, hi: int) -> int:
        return int(min(max(math.ceil(value), lo), hi))

    jl = clamp(config.C1 * qe * logn, config.min_jl_dim, config.max_jl_dim)
    msk = clamp(config.C2 * qe * qe * logn, config.min_sketch_dim, config.max_sketch_dim)
    nb = clamp(config.C3 * qe * qe * logn, config.min_bucket_dim, config.max_bucket_dim)
    if config.sketch_internal_dim is not None:
        internal = config.sketch_internal_dim
    else:
        # node accuracy 1/(10q), failure probability 1/n^2
        delta = min(0.5, 1.0 / max(n, 2) ** 2)
        internal = default_internal_dim(qe, 1.0 / (10 * qe), delta, cap=config.max_internal_dim)
    internal = max(internal, msk)
    return SketchDims(jl, msk, nb, internal)


class TaylorRowSampler:
    """Row-norm sampler for ``phi(X) (B^T B + lam I)^{-1/2}``.

    ``phi`` stacks the blocks ``sqrt(a_w) g(x) x^{(x)w}`` for ``w = 0..q``
    where ``a_w = exp(spec.log_coeffs[w])`` and ``g = spec.prefactor(X)``.
    Instances are callable with the row-sampler contract of
    :func:`ksembed.sampling.recursive_leverage_sampling`.
    """

    def __init__(self, X: SparseDataMatrix, spec, config: SamplerConfig | None = None):
        self.X = X = as_data_matrix(X)
        self.spec = spec
        self.config = config or SamplerConfig()
        self.q = int(spec.q)
        self.d, self.n = X.shape
        self.log_coeffs = np.asarray(spec.log_coeffs, dtype=np.float64)
        self.prefactor = np.asarray(spec.prefactor(X), dtype=np.float64)
        self.dims = sketch_dims(self.q, self.n, self.config)
        self._shared_family = None
        self._csr = X.csr

    # ---- sketches -------------------------------------------------------

    def _round_seed(self, round_index: int) -> int:
        return child_seed(self.config.seed, "row_sampler", round_index)

    def _family(self, round_seed: int) -> list[np.ndarray]:
        """``P[0..q]``, compressed to at most ``n`` rows (same Gram matrices)."""
        if self.config.share_sketches and self._shared_family is not None:
            return self._shared_family
        if self.q == 0:
            fam = [np.ones((1, self.n))]
        else:
            tree_seed = child_seed(self.config.seed, "tree") if self.config.share_sketches else child_seed(round_seed, "tree")
            tree = build_sketch_tree(
                self.d, self.q, self.dims.sketch, self.dims.internal, self.config.osnap_sparsity, tree_seed
            )
            fam = sketch_matrix_family(tree, self.X)
            if self.dims.sketch > self.n:
                # only P^T P enters any stage quantity, and R^T R = P^T P
                fam = [np.linalg.qr(P, mode="r") for P in fam]
        if self.config.share_sketches:
            self._shared_family = fam
        return fam

    # ---- main entry -------------------------------------------------------

    def __call__(self, B, lam: float, s: int, round_index: int = 1) -> tuple[SamplingMatrix, np.ndarray]:
        Pi = self.sample(B, lam, s, round_index)
        return Pi, Pi.embedding

    def sample(self, B, lam: float, s: int, round_index: int = 1) -> SamplingMatrix:
        """Draw ``s`` i.i.d. lifted-feature rows with self-reported probabilities."""
        q, d, n = self.q, self.d, self.n
        dims = self.dims
        seed = self._round_seed(round_index)

        H = gaussian_matrix(n, dims.jl, seed, "H")
        M = regularized_inv_sqrt_apply(B, lam, H) * self.prefactor[:, None]
        P = self._family(seed)

        # block masses: mass[a, j] = a_a ||P[q-a] M_j||^2
        mass = np.zeros((q + 1, dims.jl))
        for a in range(q + 1):
            if np.isfinite(self.log_coeffs[a]):
                mass[a] = math.exp(self.log_coeffs[a]) * np.sum((P[q - a] @ M) ** 2, axis=0)
        col_mass = mass.sum(axis=0)
        total = col_mass.sum()
        if not np.isfinite(total):
            raise NumericalError("non-finite column masses", stage="column_distribution")
        if total <= 0:
            raise DegenerateInputError("the sketched lifting is identically zero")
        p = col_mass / total
        with np.errstate(invalid="ignore", divide="ignore"):
            y = np.where(col_mass > 0, mass / col_mass, 0.0)

        U = stream(seed, "walk_uniforms").random((s, 2 + 2 * max(q, 1)))
        js = _categorical(p, U[:, 0])
        ws = np.empty(s, dtype=np.int64)
        for j in np.unique(js):
            sel = js == j
            ws[sel] = _categorical(y[:, j], U[sel, 1])

        buckets = _Buckets(self, s, seed)
        tables = _TableCache(self, M, P, buckets)

        idx = np.full((s, q), -1, dtype=np.int64)
        for a in range(1, q + 1):
            active = np.flatnonzero(ws >= a)
            if active.size == 0:
                break
            keys = np.column_stack([ws[active], idx[active, : a - 1]])
            uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
            inverse = inverse.ravel()
            for key, members in zip(uniq, _groups(inverse, uniq.shape[0])):
                w = int(key[0])
                prefix = tuple(int(i) for i in key[1:])
                tab = tables.get(prefix, a + q - w)
                walks = active[members]
                idx[walks, a - 1] = tab.draw(js[walks], U[walks, 2 * a], U[walks, 2 * a + 1])

        # exact draw probability of every realized feature, by replay over all j
        keys = np.column_stack([ws, idx])
        uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
        inverse = inverse.ravel()
        prob = np.empty(uniq.shape[0])
        log_p = _safe_log(p)
        log_y = _safe_log(y)
        for g, key in enumerate(uniq):
            w = int(key[0])
            path = tuple(int(i) for i in key[1 : 1 + w])
            log_terms = log_p + log_y[w]
            for b in range(1, w + 1):
                tab = tables.get(path[: b - 1], b + q - w)
                log_terms = log_terms + tab.log_step(path[b - 1])
            prob[g] = _log_sum_exp(log_terms)
        if not np.all(np.isfinite(prob)) or np.any(prob <= 0):
            raise NumericalError("a realized sample has zero or non-finite probability", stage="beta_replay")

        degrees = ws
        probabilities = np.minimum(prob[inverse], 1.0)
        weights = 1.0 / np.sqrt(s * probabilities)
        Pi = SamplingMatrix(d, degrees, idx, weights, probabilities, kernel=self.spec)
        Z = embed_rows(self.X, self.spec, Pi, prefactor=self.prefactor, products=tables.products)
        return Pi.replace(embedding=Z, lambdas=(float(lam),))


def _groups(labels: np.ndarray, n_groups: int) -> list[np.ndarray]:
    order = np.argsort(labels, kind="stable")
    bounds = np.cumsum(np.bincount(labels, minlength=n_groups))
    return np.split(order, bounds[:-1])


def _safe_log(a: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(a)


def _log_sum_exp(log_terms: np.ndarray) -> float:
    top = np.max(log_terms)
    if not np.isfinite(top):
        return 0.0
    return math.exp(top) * math.fsum(np.exp(log_terms - top))


def _categorical(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws; never returns a zero-weight category."""
    cdf = np.cumsum(weights)
    total = cdf[-1]
    picks = np.searchsorted(cdf, u * total, side="right")
    last = np.flatnonzero(weights > 0)[-1]
    return np.minimum(picks, last)


class _Buckets:
    """Random partition of the data rows with per-bucket Gaussian compressors."""

    def __init__(self, sampler: TaylorRowSampler, s: int, seed: int):
        d = sampler.d
        self.n_buckets = math.ceil(max(sampler.q, 1) ** 1.5 * s)
        self.h = stream(seed, "hash").integers(0, self.n_buckets, size=d)
        # rows of the data ordered by bucket; bucket r owns order[start[r]:stop[r]]
        labels, inv = np.unique(self.h, return_inverse=True)
        self.order = np.argsort(inv, kind="stable")
        counts = np.bincount(inv, minlength=labels.size)
        self.stop = np.cumsum(counts)
        self.start = self.stop - counts
        self.local = inv  # dense bucket id of each row
        self.position = np.empty(d, dtype=np.int64)
        self.position[self.order] = np.arange(d)
        # one n' x d Gaussian; bucket r uses the columns of its members
        self.G = gaussian_matrix(sampler.dims.bucket, d, seed, "bucket_compressors")
        self.multi = [r for r in range(labels.size) if counts[r] > 1]
        self.singleton_scale = np.sum(self.G**2, axis=0)


class _StageTable:
    """Stage quantities of one ``(prefix, k)`` pair for all JL columns.

    ``row_mass[i, j]`` is ``||X_i D_j P_k^T||^2`` and ``bucket_mass[r, j]``
    is ``||W_r D_j P_k^T||_F^2`` with ``D_j = diag(M_j * prefix product)``.
    """

    def __init__(self, buckets: _Buckets, row_mass: np.ndarray, bucket_mass: np.ndarray):
        self.buckets = buckets
        self.row_mass = row_mass
        self.bucket_mass = bucket_mass
        self.bucket_total = bucket_mass.sum(axis=0)
        # row mass grouped by bucket, in bucket order, for within-bucket draws
        self.sorted_mass = row_mass[buckets.order]
        sums = np.add.reduceat(self.sorted_mass, buckets.start, axis=0)
        self.row_bucket_sum = sums[buckets.local]

    def draw(self, js: np.ndarray, u_bucket: np.ndarray, u_row: np.ndarray) -> np.ndarray:
        bk = self.buckets
        out = np.empty(js.shape[0], dtype=np.int64)
        for j in np.unique(js):
            sel = js == j
            if not self.bucket_total[j] > 0:
                raise NumericalError("stage distribution has zero mass", stage="bucket_draw")
            r = _categorical(self.bucket_mass[:, j], u_bucket[sel])
            lo, hi = bk.start[r], bk.stop[r]
            cdf = np.cumsum(self.sorted_mass[:, j])
            base = np.where(lo > 0, cdf[np.maximum(lo - 1, 0)], 0.0)
            span = cdf[hi - 1] - base
            if np.any(span <= 0):
                raise NumericalError("selected bucket has zero row mass", stage="row_draw")
            pos = np.searchsorted(cdf, base + u_row[sel] * span, side="right")
            pos = np.clip(pos, lo, hi - 1)
            # step back over trailing zero-mass rows after clipping
            while True:
                zero = self.sorted_mass[pos, j] <= 0
                if not np.any(zero):
                    break
                pos[zero] -= 1
            out[sel] = bk.order[pos]
        return out

    def log_step(self, i: int) -> np.ndarray:
        """``log(p*_b q*_b)`` of choosing row ``i`` under every JL column."""
        bk = self.buckets
        r = bk.local[i]
        with np.errstate(divide="ignore", invalid="ignore"):
            p_bucket = np.where(self.bucket_total > 0, self.bucket_mass[r] / self.bucket_total, 0.0)
            q_row = np.where(self.row_bucket_sum[i] > 0, self.row_mass[i] / self.row_bucket_sum[i], 0.0)
            return np.log(p_bucket) + np.log(q_row)


class _TableCache:
    def __init__(self, sampler: TaylorRowSampler, M: np.ndarray, P: list[np.ndarray], buckets: _Buckets):
        self.sampler = sampler
        self.M = M
        self.P = P
        self.buckets = buckets
        self.tables: dict = {}
        self.products: dict = {(): None}

    def prefix_product(self, prefix: tuple[int, ...]):
        """Elementwise product of the data rows in ``prefix`` (``None`` = all ones)."""
        if prefix in self.products:
            return self.products[prefix]
        head = self.prefix_product(prefix[:-1])
        row = self.sampler._csr.getrow(prefix[-1]).toarray().ravel()
        out = row if head is None else head * row
        self.products[prefix] = out
        return out

    def get(self, prefix: tuple[int, ...], k: int) -> _StageTable:
        key = (prefix, k)
        tab = self.tables.get(key)
        if tab is None:
            tab = self._build(prefix, k)
            self.tables[key] = tab
        return tab

    def _build(self, prefix: tuple[int, ...], k: int) -> _StageTable:
        smp, bk = self.sampler, self.buckets
        d, jl = smp.d, self.M.shape[1]
        Pk = self.P[k]
        msk = Pk.shape[0]
        prod = self.prefix_product(prefix)
        if prod is None:
            support = np.arange(smp.n)
            A = smp.X.csc
        else:
            support = np.flatnonzero(prod)
            A = smp.X.csc[:, support] @ sp.diags(prod[support])
        A = sp.csr_matrix(A)
        A.eliminate_zeros()
        # only rows with data on the support carry mass
        active = np.flatnonzero(np.diff(A.indptr))
        T = _row_products(A, active, self.M[support], Pk[:, support])
        row_mass = np.zeros((d, jl))
        row_mass[active] = np.einsum("ijk,ijk->ij", T, T)
        slot = np.full(d, -1, dtype=np.int64)
        slot[active] = np.arange(active.size)
        n_b = bk.stop.size
        bucket_mass = np.zeros((n_b, jl))
        single = bk.stop - bk.start == 1
        single_rows = bk.order[bk.start[single]]
        bucket_mass[single] = bk.singleton_scale[single_rows, None] * row_mass[single_rows]
        for r in bk.multi:
            members = bk.order[bk.start[r] : bk.stop[r]]
            members = members[slot[members] >= 0]
            if members.size == 0:
                continue
            W = bk.G[:, members] @ T[slot[members]].reshape(members.size, jl * msk)
            W = W.reshape(-1, jl, msk)
            bucket_mass[r] = np.einsum("ijk,ijk->j", W, W)
        if not (np.all(np.isfinite(row_mass)) and np.all(np.isfinite(bucket_mass))):
            raise NumericalError("non-finite stage masses", stage="stage_table")
        return _StageTable(bk, row_mass, bucket_mass)


def _row_products(A: sp.csr_matrix, active: np.ndarray, M: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``T[a] = (A_i * M)^T P^T`` for every active row ``i = active[a]``.

    ``A`` is ``d x n`` on the current support, ``M`` is ``n x d'`` and ``P``
    is ``m' x n``; the result is ``len(active) x d' x m'``.
    """
    jl, msk = M.shape[1], P.shape[0]
    n = M.shape[0]
    T = np.empty((active.size, jl, msk))
    if active.size * _ROW_LOOP_COST <= n * jl * msk:
        # few rows: one small dense product per row over its nonzero columns
        for a, i in enumerate(active):
            lo, hi = A.indptr[i], A.indptr[i + 1]
            cols = A.indices[lo:hi]
            T[a] = (M[cols] * A.data[lo:hi, None]).T @ P[:, cols].T
        return T
    Aa = A[active]
    flat = T.reshape(active.size, jl * msk)
    flat[:] = 0.0
    step = max(1, _TABLE_CHUNK // max(jl * msk, 1))
    for lo in range(0, n, step):
        hi = min(n, lo + step)
        Uc = (M[lo:hi, :, None] * P[:, lo:hi].T[:, None, :]).reshape(hi - lo, jl * msk)
        flat += Aa[:, lo:hi] @ Uc
    return T


def embed_rows(X: SparseDataMatrix, spec, Pi: SamplingMatrix, prefactor=None, products=None) -> np.ndarray:
    """``Z[l, c] = weight_l g(x_c) sqrt(a_w) prod_a X[i_a, c]`` for every sampled row."""
    d, n = X.shape
    if Pi.d != d:
        raise InvalidArgumentError(f"sampler was built for d={Pi.d}, data has d={d}")
    if Pi.max_degree and (Pi.indices.max() >= d or np.any(Pi.indices[Pi.indices != -1] < 0)):
        raise InvalidArgumentError(f"sampled indices fall outside [0, {d})")
    g = np.asarray(spec.prefactor(X) if prefactor is None else prefactor)
    log_coeffs = np.asarray(spec.log_coeffs)
    cache = {} if products is None else dict(products)
    cache[()] = None
    csr = X.csr

    def product(prefix):
        if prefix in cache:
            return cache[prefix]
        head = product(prefix[:-1])
        row = csr.getrow(prefix[-1]).toarray().ravel()
        out = row if head is None else head * row
        cache[prefix] = out
        return out

    keys = np.column_stack([Pi.degrees, Pi.indices])
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    rows = np.empty((uniq.shape[0], n))
    for g_id, key in enumerate(uniq):
        w = int(key[0])
        path = tuple(int(i) for i in key[1 : 1 + w])
        if w > len(log_coeffs) - 1 or not np.isfinite(log_coeffs[w]):
            raise InvalidArgumentError(f"sample uses block {w}, which the kernel does not contain")
        scale = math.exp(0.5 * log_coeffs[w])
        prod = product(path)
        rows[g_id] = scale * (g if prod is None else g * prod)
    return Pi.weights[:, None] * rows[inverse.ravel()]
