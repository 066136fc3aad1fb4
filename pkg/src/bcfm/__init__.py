"""Bayesian clustering factor models.

Concomitant dimension reduction and clustering: a factor model whose latent
factors follow a Gaussian mixture, fitted by Gibbs sampling, with an
information criterion for choosing the numbers of factors and clusters and a
PCA plus k-means baseline.
"""
from .gibbs import (
    ChainConfig,
    ChainOutput,
    SamplerError,
    label_agreement,
    log_joint,
    run_chain,
    summarize_chain,
)
from .kernels import LdlFactors, NotPositiveDefiniteError, RngStream
from .model import (
    Dataset,
    ElicitationArtifacts,
    ElicitationError,
    ModelDims,
    PriorSpec,
    State,
    elicit,
    initial_state,
)
from .selection import (
    ICRecord,
    PosteriorPointEstimate,
    fit_model,
    grid_search,
    information_criterion,
    integrated_loglik,
    parameter_count,
)
from .baselines import GapResult, gap_statistic, kaiser_count, pca_kmeans_pipeline
from .simulate import SimSpec, alignment_accuracy, generate_dataset, sim_spec
from .estimator import BCFM, BCFMSelector, PCAKMeans

__all__ = [
    "ChainConfig",
    "ChainOutput",
    "SamplerError",
    "label_agreement",
    "log_joint",
    "run_chain",
    "summarize_chain",
    "LdlFactors",
    "NotPositiveDefiniteError",
    "RngStream",
    "Dataset",
    "ElicitationArtifacts",
    "ElicitationError",
    "ModelDims",
    "PriorSpec",
    "State",
    "elicit",
    "initial_state",
    "ICRecord",
    "PosteriorPointEstimate",
    "fit_model",
    "grid_search",
    "information_criterion",
    "integrated_loglik",
    "parameter_count",
    "GapResult",
    "gap_statistic",
    "kaiser_count",
    "pca_kmeans_pipeline",
    "SimSpec",
    "alignment_accuracy",
    "generate_dataset",
    "sim_spec",
    "BCFM",
    "BCFMSelector",
    "PCAKMeans",
]

__version__ = "0.1.0"
