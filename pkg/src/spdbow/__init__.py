"""Bag-of-words classification of SPD covariance descriptors.

Geometry on the SPD manifold, a log-Euclidean embedding, k-means codebooks,
three histogram encoders, and a multi-channel RBF kernel SVM, wired together
by a pipeline CLI.
"""

from .codebook import Codebook, KmeansConfig, assign, train_codebook
from .descriptors import (
    BlockDescriptor,
    BlockSpec,
    IntegralStats,
    TrajectoryFeature,
    build_integral,
    covariance,
    default_block_spec,
    extract_blocks,
    generate_synthetic,
)
from .encoders import (
    Histogram,
    MultiChannelHistogram,
    SparseCode,
    encode_ha,
    encode_sc,
    encode_stp,
    lasso,
)
from .kernel_svm import (
    KernelParams,
    SvmModel,
    chi2_distance,
    compute_channel_scales,
    gram_matrix,
    kernel_row,
    kernel_value,
    predict,
    train_svm,
)
from .manifold import (
    EigPair,
    KarcherMeanResult,
    LeVector,
    SpdMatrix,
    SymMatrix,
    airm_distance,
    airm_inner,
    exp_map,
    karcher_mean,
    log_euclidean_embed,
    log_map,
    matrix_exp,
    matrix_log,
    sym_eig,
    unvec,
    vec,
)

__version__ = "0.1.0"
