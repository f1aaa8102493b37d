"""Subspace embeddings for polynomial, Gaussian and dot-product kernels.

Recursive ridge-leverage-score sampling of explicit kernel liftings,
with fast row samplers that never materialize the lifting, plus exact and
approximate kernel ridge regression.
"""

from ksembed.errors import DegenerateInputError, InvalidArgumentError, NumericalError, ResourceLimitError
from ksembed.krr import KrrModel, fit_approx, fit_exact, predict
from ksembed.linalg import SparseDataMatrix, spectral_approx_check, statistical_dimension
from ksembed.poly import poly_embedding, poly_row_sampler
from ksembed.sampling import FeatureIndex, SamplerConfig, SamplingMatrix, recursive_leverage_sampling
from ksembed.sketch import SketchTree, build_sketch_tree
from ksembed.taylor import TaylorKernelSpec, taylor_embedding, taylor_row_sampler

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "FeatureIndex",
    "InvalidArgumentError",
    "KrrModel",
    "NumericalError",
    "ResourceLimitError",
    "SamplerConfig",
    "SamplingMatrix",
    "SketchTree",
    "SparseDataMatrix",
    "TaylorKernelSpec",
    "build_sketch_tree",
    "fit_approx",
    "fit_exact",
    "poly_embedding",
    "poly_row_sampler",
    "predict",
    "recursive_leverage_sampling",
    "spectral_approx_check",
    "statistical_dimension",
    "taylor_embedding",
    "taylor_row_sampler",
]
