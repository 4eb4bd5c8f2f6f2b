"""Sparse plus rank-1-times-binary weight compression.

A weight matrix W is approximated as W_S + (u v^T) . B, where W_S keeps a
budgeted set of entries of W exactly, u and v are non-negative factor
vectors, B is a dense plane of +1/-1 signs and the dot is elementwise.
Retention is scored against calibration activations, so the entries that
matter most to the layer's output survive. The package covers the
alternating decomposition itself, the activation-norm calibration pass,
a packed single-file container with bit-exact size accounting, a matvec
kernel that runs on the decomposed form directly, brute-force reference
implementations for checking all of it, and a manifest-driven pipeline
for whole models.
"""

from .calibration import ActivationStats, stats_from_batches
from .decompose import (
    CompressConfig,
    InfeasibleBudgetError,
    SlabDecomposition,
    SparsityBudget,
    build_binary_lowrank,
    config_with,
    reconstruct,
    refine_binary_lowrank,
    score,
    select_mask,
    slab_decompose,
    sparsity_budget,
    weighted_error,
)
from .pipeline import (
    LayerReport,
    ManifestError,
    ManifestLayer,
    ModelManifest,
    TensorFileError,
    baseline_sparse_lowrank,
    compress_model,
    layer_report,
    load_manifest,
    manifest_from_dict,
    rank_sweep,
    read_sltn,
    validate_manifest,
    write_sltn,
)
from .slabfmt import (
    CrReport,
    SlabFormatError,
    cr_report,
    cr_value,
    pack,
    packed_length_bits,
    section_sizes,
    slab_matvec,
    unpack,
)
from .tensor import (
    DegenerateSpectrumError,
    SignMatrix,
    SingularTriplet,
    hadamard,
    pack_bitplane,
    sign_matrix,
    top_singular_triplet,
    unpack_bitplane,
)

__version__ = "0.1.0"

__all__ = [
    "ActivationStats",
    "CompressConfig",
    "CrReport",
    "DegenerateSpectrumError",
    "InfeasibleBudgetError",
    "LayerReport",
    "ManifestError",
    "ManifestLayer",
    "ModelManifest",
    "SignMatrix",
    "SingularTriplet",
    "SlabDecomposition",
    "SlabFormatError",
    "SparsityBudget",
    "TensorFileError",
    "baseline_sparse_lowrank",
    "build_binary_lowrank",
    "compress_model",
    "config_with",
    "cr_report",
    "cr_value",
    "hadamard",
    "layer_report",
    "load_manifest",
    "manifest_from_dict",
    "pack",
    "pack_bitplane",
    "packed_length_bits",
    "rank_sweep",
    "read_sltn",
    "reconstruct",
    "refine_binary_lowrank",
    "score",
    "section_sizes",
    "select_mask",
    "sign_matrix",
    "slab_decompose",
    "slab_matvec",
    "sparsity_budget",
    "stats_from_batches",
    "top_singular_triplet",
    "unpack",
    "unpack_bitplane",
    "validate_manifest",
    "weighted_error",
    "write_sltn",
]
