"""Cross-lingual representation analysis with PARAFAC2 signatures."""

from .covariance import CovarianceSlice, build_slices, center_columns, cross_covariance
from .errors import DataError, NumericalError, RepFactorError
from .model_io import (
    AnalysisSet,
    LanguageProfile,
    ReprMatrix,
    load_manifest,
    profile_corpus,
    read_matrix,
    write_matrix,
)
from .parafac2 import (
    Parafac2Model,
    SolverOptions,
    coupling_deviation,
    decompose,
    fit_error,
    load_model,
    reconstruct,
    save_model,
)
from .phylo import DistanceMatrix, PhyloTree, average_distance, cosine_distance_matrix, to_newick, upgma
from .signatures import Signature, SignatureTable, build_table, condense, extract_signature
from .stats import (
    bh_fdr,
    chi_square_variance,
    external_score_correlation,
    layer_trend_analysis,
    mann_kendall,
    pearson,
    property_correlation,
    variance_test,
)

__version__ = "0.1.0"

__all__ = [
    "CovarianceSlice",
    "build_slices",
    "center_columns",
    "cross_covariance",
    "DataError",
    "NumericalError",
    "RepFactorError",
    "AnalysisSet",
    "LanguageProfile",
    "ReprMatrix",
    "load_manifest",
    "profile_corpus",
    "read_matrix",
    "write_matrix",
    "Parafac2Model",
    "SolverOptions",
    "coupling_deviation",
    "decompose",
    "fit_error",
    "load_model",
    "reconstruct",
    "save_model",
    "DistanceMatrix",
    "PhyloTree",
    "average_distance",
    "cosine_distance_matrix",
    "to_newick",
    "upgma",
    "Signature",
    "SignatureTable",
    "build_table",
    "condense",
    "extract_signature",
    "bh_fdr",
    "chi_square_variance",
    "external_score_correlation",
    "layer_trend_analysis",
    "mann_kendall",
    "pearson",
    "property_correlation",
    "variance_test",
]
