"""Constrained PARAFAC2 for irregular sparse tensors via AO-ADMM."""

__version__ = "0.1.0"

from .io import load_irregular_tensor, load_matrix, load_model, save_irregular_tensor, save_matrix, save_model
from .prox import ConstraintKind, prox_apply
from .solver import (
    ConstraintSpec,
    FitOptions,
    FitTrace,
    Parafac2Model,
    Smoothness,
    compute_fit,
    compute_sparsity,
    fit,
    reconstruct_slice,
)
from .synth import SynthConfig, generate_synthetic
from .tensor import IrregularTensor, SparseSlice, frobenius_norm_sq

__all__ = [
    "ConstraintKind",
    "ConstraintSpec",
    "FitOptions",
    "FitTrace",
    "IrregularTensor",
    "Parafac2Model",
    "Smoothness",
    "SparseSlice",
    "SynthConfig",
    "compute_fit",
    "compute_sparsity",
    "fit",
    "frobenius_norm_sq",
    "generate_synthetic",
    "load_irregular_tensor",
    "load_matrix",
    "load_model",
    "prox_apply",
    "reconstruct_slice",
    "save_irregular_tensor",
    "save_matrix",
    "save_model",
]
