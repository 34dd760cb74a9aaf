"""Dynamic length-squared and leverage-score sampling for ridge regression and low-rank approximation."""

from .errors import (
    AcceptanceError,
    ConvergenceError,
    DynSketchError,
    EmptyStructureError,
    MatrixMarketError,
    RankDeficientError,
    StageError,
)
from .leverage import ObliviousEmbedding, SampState, build_samp, lev_sample, matvec_sampler
from .linalg import (
    RidgeSpectrum,
    SvdFactors,
    best_rank_k_error,
    exact_leverage_scores,
    pseudo_inverse,
    ridge_closed_form,
    ridge_spectrum,
    thin_svd,
)
from .lowrank import (
    LowRankConfig,
    LowRankModel,
    build_low_rank,
    model_error,
    pcp_sample,
    sample_row_given_column,
    sample_rows_given_column,
)
from .mmio import read_bag_of_words, read_matrix_market, write_matrix_market
from .ridge import RidgeConfig, RidgeSolution, conjugate_gradient, ridge_sample_sizes, ridge_solve, solution_entry
from .sampler import (
    ColSampler,
    DynSamp,
    RowSampler,
    SparseMatrix,
    len_sq_sample_cols_of_SA,
    len_sq_sample_rows,
)
from .tree import StaticForest, WeightedTree

__version__ = "0.1.0"

__all__ = [
    "AcceptanceError", "ColSampler", "ConvergenceError", "DynSamp", "DynSketchError",
    "EmptyStructureError", "LowRankConfig", "LowRankModel", "MatrixMarketError",
    "ObliviousEmbedding", "RankDeficientError", "RidgeConfig", "RidgeSolution", "RidgeSpectrum",
    "RowSampler", "SampState", "SparseMatrix", "StageError", "StaticForest", "SvdFactors",
    "WeightedTree", "best_rank_k_error", "build_low_rank", "build_samp", "conjugate_gradient",
    "exact_leverage_scores", "len_sq_sample_cols_of_SA", "len_sq_sample_rows", "lev_sample",
    "matvec_sampler", "model_error", "pcp_sample", "pseudo_inverse", "read_bag_of_words",
    "read_matrix_market", "ridge_closed_form", "ridge_sample_sizes", "ridge_solve",
    "ridge_spectrum", "sample_row_given_column", "sample_rows_given_column", "solution_entry",
    "thin_svd", "write_matrix_market",
]
