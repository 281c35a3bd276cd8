"""Kernel mean embeddings of counterfactual distributions."""

from .cme import CmeModel, NumericalError
from .embedding import (
    WeightedEmbedding,
    empirical_embedding,
    inner_product,
    squared_mmd_biased,
    squared_mmd_unbiased,
)
from .kernels import KernelFamily, KernelSpec, ProductKernel, eval_kernel, gram, median_heuristic, nystrom_factor

__version__ = "0.1.0"

__all__ = [
    "CmeModel",
    "KernelFamily",
    "KernelSpec",
    "NumericalError",
    "ProductKernel",
    "WeightedEmbedding",
    "empirical_embedding",
    "eval_kernel",
    "gram",
    "inner_product",
    "median_heuristic",
    "nystrom_factor",
    "squared_mmd_biased",
    "squared_mmd_unbiased",
]
