"""Tree-structured sketch for tensor powers.

A :class:`SketchTree` of degree ``q`` maps ``R^{d^q}`` to ``R^{m'}``.  Each
of the ``q`` leaves is an OSNAP sparse embedding ``R^d -> R^{s_int}``.  The
leaves are combined pairwise along a balanced binary tree by randomized
Hadamard nodes.  A dense Gaussian matrix then compresses the root output to
``m'`` rows.  Every node is bilinear in its two inputs, so the whole sketch
is a linear map on ``R^{d^q}``, and it can be evaluated on ``x^{(x)q}``
without forming the tensor.

Tensor factors are ordered like ``np.kron``: leaf 0 is the leftmost (slowest
varying) factor.  Replacing the ``j`` rightmost leaf inputs with ``e_1``
gives the suffix family ``Q(x^{(x)(q-j)} (x) e_1^{(x)j})``.  Only the
ancestors of a replaced leaf change between consecutive members, and the
evaluation memoizes node outputs per replacement state so each member only
recomputes one root path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache, reduce

import numpy as np
import scipy.sparse as sp
from scipy.linalg import hadamard

from ksembed._rng import bulk_stream, stream
from ksembed.errors import InvalidArgumentError, ResourceLimitError
from ksembed.linalg import SparseDataMatrix, as_column_vector, as_data_matrix

DENSE_TENSOR_LIMIT = 10**7
# Columns per evaluation chunk are chosen so one node buffer stays near this size.
_CHUNK_ELEMENTS = 1 << 21


def next_pow2(value: float) -> int:
    """Smallest power of two that is at least ``value`` (and at least 1)."""
    value = max(1, int(math.ceil(value)))
    return 1 << (value - 1).bit_length()


@lru_cache(maxsize=32)
def _hadamard(n: int) -> np.ndarray:
    H = hadamard(n).astype(np.float64)
    H.setflags(write=False)
    return H


def fwht(a: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along axis 0.

    Uses the Sylvester ordering, i.e. the result equals
    ``scipy.linalg.hadamard(N) @ a`` up to rounding.  ``H_N`` is split as
    ``H_{N1} (x) H_{N2}`` with ``N1 ~ sqrt(N)`` and applied as two dense
    products, which is much faster than a butterfly loop in numpy.
    """
    a = np.asarray(a, dtype=np.float64)
    N = a.shape[0]
    if N < 1 or N & (N - 1):
        raise InvalidArgumentError(f"fwht length must be a power of two, got {N}")
    n1 = 1 << ((N.bit_length() - 1) // 2)
    n2 = N // n1
    y = np.matmul(_hadamard(n2), a.reshape(n1, n2, -1))
    return (_hadamard(n1) @ y.reshape(n1, -1)).reshape(a.shape)


def default_internal_dim(q: int, epsilon: float, delta: float, cap: int | None = None) -> int:
    """Power-of-two node width ``q * eps^-2 * ln^3(1/delta)``, optionally capped."""
    if q < 1 or not 0 < epsilon < 1 or not 0 < delta < 1:
        raise InvalidArgumentError("need q >= 1 and epsilon, delta in (0, 1)")
    dim = next_pow2(q * math.log(1.0 / delta) ** 3 / epsilon**2)
    if cap is not None:
        dim = min(dim, next_pow2(cap))
    return dim


def default_final_dim(epsilon: float, delta: float, constant: float = 5.0, cap: int | None = None) -> int:
    """Gaussian compression width ``constant * eps^-2 * ln(1/delta)``, optionally capped."""
    if not 0 < epsilon < 1 or not 0 < delta < 1:
        raise InvalidArgumentError("epsilon and delta must lie in (0, 1)")
    dim = int(math.ceil(constant * math.log(1.0 / delta) / epsilon**2))
    if cap is not None:
        dim = min(dim, int(cap))
    return dim


@dataclass(frozen=True)
class _Node:
    lo: int
    hi: int
    left: int  # child ids; -1 for leaves
    right: int

    @property
    def is_leaf(self) -> bool:
        return self.left < 0


@dataclass(frozen=True, eq=False)
class SketchTree:
    """Parameters of one sketch instance.

    The tree itself is immutable and may be shared between threads.
    Evaluations keep their scratch buffers local, so no cached state lives
    on the tree apart from lazily generated random matrices.
    """

    d: int
    q: int
    final_dim: int
    internal_dim: int
    osnap_sparsity: int
    seed: int
    nodes: tuple[_Node, ...] = field(repr=False)
    root: int = field(repr=False)

    @property
    def n_leaves(self) -> int:
        return sum(1 for nd in self.nodes if nd.is_leaf)

    @property
    def n_internal(self) -> int:
        return len(self.nodes) - self.n_leaves

    @cached_property
    def _leaf_maps(self) -> dict[int, sp.csr_matrix]:
        maps = {}
        N, k = self.internal_dim, self.osnap_sparsity
        bounds = [(b * N) // k for b in range(k + 1)]
        for nid, nd in enumerate(self.nodes):
            if not nd.is_leaf:
                continue
            rng = stream(self.seed, "sketch", "osnap", nd.lo)
            rows = np.empty((k, self.d), dtype=np.int64)
            for b in range(k):
                rows[b] = bounds[b] + rng.integers(0, bounds[b + 1] - bounds[b], size=self.d)
            signs = rng.choice(np.array([-1.0, 1.0]), size=(k, self.d)) / math.sqrt(k)
            cols = np.broadcast_to(np.arange(self.d), (k, self.d))
            maps[nid] = sp.csr_matrix(
                (signs.ravel(), (rows.ravel(), cols.ravel())), shape=(N, self.d)
            )
        return maps

    @cached_property
    def _node_signs(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        signs = {}
        for nid, nd in enumerate(self.nodes):
            if nd.is_leaf:
                continue
            rng = stream(self.seed, "sketch", "node", nid)
            d1 = rng.choice(np.array([-1.0, 1.0]), size=self.internal_dim)
            d2 = rng.choice(np.array([-1.0, 1.0]), size=self.internal_dim)
            signs[nid] = (d1, d2)
        return signs

    @cached_property
    def compression(self) -> np.ndarray:
        """The ``m' x s_int`` Gaussian matrix with ``N(0, 1/m')`` entries."""
        G = bulk_stream(self.seed, "sketch", "compression").standard_normal((self.final_dim, self.internal_dim))
        G *= 1.0 / math.sqrt(self.final_dim)
        return G

    def leaf_map(self, leaf: int) -> sp.csr_matrix:
        """The OSNAP matrix of tensor factor ``leaf`` (``s_int x d``)."""
        for nid, nd in enumerate(self.nodes):
            if nd.is_leaf and nd.lo == leaf:
                return self._leaf_maps[nid]
        raise InvalidArgumentError(f"leaf {leaf} outside [0, {self.q})")

    def combine(self, nid: int, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Apply internal node ``nid`` to ``u (x) v`` column by column."""
        d1, d2 = self._node_signs[nid]
        a = fwht(d1[:, None] * u)
        b = fwht(d2[:, None] * v)
        return a * b * (1.0 / math.sqrt(self.internal_dim))


def build_sketch_tree(
    d: int, q: int, m_prime: int, s_int: int, osnap_sparsity: int = 8, seed: int = 0
) -> SketchTree:
    """Instantiate a degree-``q`` sketch ``R^{d^q} -> R^{m_prime}``.

    ``s_int`` is rounded up to a power of two for the Hadamard nodes.  The
    OSNAP sparsity is clamped to ``s_int``.
    """
    for name, val in (("d", d), ("q", q), ("m_prime", m_prime), ("s_int", s_int), ("osnap_sparsity", osnap_sparsity)):
        if int(val) != val or val < 1:
            raise InvalidArgumentError(f"{name} must be a positive integer, got {val}")
    if s_int < m_prime:
        raise InvalidArgumentError(f"s_int ({s_int}) must be at least m_prime ({m_prime})")
    N = next_pow2(s_int)
    nodes: list[_Node] = []

    def build(lo: int, hi: int) -> int:
        if hi - lo == 1:
            nodes.append(_Node(lo, hi, -1, -1))
            return len(nodes) - 1
        mid = (lo + hi + 1) // 2
        left = build(lo, mid)
        right = build(mid, hi)
        nodes.append(_Node(lo, hi, left, right))
        return len(nodes) - 1

    root = build(0, int(q))
    return SketchTree(
        d=int(d),
        q=int(q),
        final_dim=int(m_prime),
        internal_dim=N,
        osnap_sparsity=min(int(osnap_sparsity), N),
        seed=int(seed),
        nodes=tuple(nodes),
        root=root,
    )


def _chunks(n_cols: int, width: int):
    step = max(1, _CHUNK_ELEMENTS // max(width, 1))
    for start in range(0, n_cols, step):
        yield start, min(n_cols, start + step)


def _e1_matrix(d: int, k: int) -> sp.csc_matrix:
    return sp.csc_matrix((np.ones(k), (np.zeros(k, dtype=np.int64), np.arange(k))), shape=(d, k))


def _evaluate(tree: SketchTree, leaf_value, memo: dict, nid: int, state) -> np.ndarray:
    key = (nid, state(tree.nodes[nid]))
    if key in memo:
        return memo[key]
    nd = tree.nodes[nid]
    if nd.is_leaf:
        out = leaf_value(nid, nd)
    else:
        u = _evaluate(tree, leaf_value, memo, nd.left, state)
        v = _evaluate(tree, leaf_value, memo, nd.right, state)
        out = tree.combine(nid, u, v)
    memo[key] = out
    return out


def evaluate_leaf_inputs(tree: SketchTree, leaf_inputs) -> np.ndarray:
    """Apply the sketch to ``sum_c v1_c (x) ... (x) vq_c`` column-wise.

    ``leaf_inputs`` holds ``q`` matrices of shape ``d x k``; column ``c`` of
    the result is the sketch of the tensor product of their ``c``-th
    columns.  This is the from-scratch reference path; it recomputes every
    node.
    """
    if len(leaf_inputs) != tree.q:
        raise InvalidArgumentError(f"expected {tree.q} leaf inputs, got {len(leaf_inputs)}")
    mats = [
        v.csc if isinstance(v, SparseDataMatrix) else sp.csc_matrix(v, dtype=np.float64)
        for v in leaf_inputs
    ]
    k = mats[0].shape[1]
    for m in mats:
        if m.shape != (tree.d, k):
            raise InvalidArgumentError(f"leaf inputs must all be {tree.d}x{k}, got {m.shape}")
    out = np.empty((tree.final_dim, k))
    G = tree.compression
    for lo, hi in _chunks(k, tree.internal_dim):
        def leaf_value(nid, nd, lo=lo, hi=hi):
            return np.asarray(tree._leaf_maps[nid] @ mats[nd.lo][:, lo:hi].toarray())

        root = _evaluate(tree, leaf_value, {}, tree.root, lambda nd: 0)
        out[:, lo:hi] = G @ root
    return out


def sketch_matrix_family(tree: SketchTree, X) -> list[np.ndarray]:
    """``P_j = Q(X^{(x)(q-j)} (x) E_1^{(x)j})`` for ``j = 0..q``.

    Each ``P_j`` is ``m' x n``.  Consecutive members share every node whose
    leaves did not change; those outputs are reused, not recomputed.
    """
    X = as_data_matrix(X)
    if X.n_rows != tree.d:
        raise InvalidArgumentError(f"data has {X.n_rows} rows, sketch expects {tree.d}")
    q, n = tree.q, X.n_cols
    family = [np.empty((tree.final_dim, n)) for _ in range(q + 1)]
    G = tree.compression
    csc = X.csc
    for lo, hi in _chunks(n, tree.internal_dim):
        width = hi - lo
        x_block = csc[:, lo:hi].toarray()
        e_block = _e1_matrix(tree.d, width).toarray()
        memo: dict = {}
        for j in range(q + 1):
            n_x = q - j

            def state(nd, n_x=n_x):
                # number of leaves of this subtree that carry e_1
                return min(max(nd.hi - n_x, 0), nd.hi - nd.lo)

            def leaf_value(nid, nd, n_x=n_x):
                src = x_block if nd.lo < n_x else e_block
                return np.asarray(tree._leaf_maps[nid] @ src)

            root = _evaluate(tree, leaf_value, memo, tree.root, state)
            family[j][:, lo:hi] = G @ root
    return family


def _recompute_family_member(tree: SketchTree, X: SparseDataMatrix, j: int) -> np.ndarray:
    n_x = tree.q - j
    e1 = _e1_matrix(tree.d, X.n_cols)
    return evaluate_leaf_inputs(tree, [X.csc if a < n_x else e1 for a in range(tree.q)])


def recompute_family(tree: SketchTree, X) -> list[np.ndarray]:
    """Reference for :func:`sketch_matrix_family` that rebuilds every node per member."""
    X = as_data_matrix(X)
    if X.n_rows != tree.d:
        raise InvalidArgumentError(f"data has {X.n_rows} rows, sketch expects {tree.d}")
    return [_recompute_family_member(tree, X, j) for j in range(tree.q + 1)]


def sketch_tensor_power(tree: SketchTree, x) -> np.ndarray:
    """``Q x^{(x)q}`` as a length-``m'`` vector."""
    col = as_column_vector(x, tree.d)
    return evaluate_leaf_inputs(tree, [col] * tree.q)[:, 0]


def sketch_suffix_family(tree: SketchTree, x) -> list[np.ndarray]:
    """``[Q(x^{(x)(q-j)} (x) e_1^{(x)j}) for j in 0..q]`` for a single vector."""
    col = as_column_vector(x, tree.d)
    fam = sketch_matrix_family(tree, SparseDataMatrix.from_scipy(col))
    return [p[:, 0] for p in fam]


def dense_tensor_power(x, q: int) -> np.ndarray:
    """Explicit ``x^{(x)q}`` in row-major (``np.kron``) order."""
    x = np.asarray(x.toarray() if sp.issparse(x) else x, dtype=np.float64).ravel()
    if q < 0:
        raise InvalidArgumentError("q must be non-negative")
    if float(x.size) ** q > DENSE_TENSOR_LIMIT:
        raise ResourceLimitError(f"d^q = {x.size}^{q} exceeds the dense limit {DENSE_TENSOR_LIMIT}")
    if q == 0:
        return np.ones(1)
    return reduce(np.kron, [x] * q)
