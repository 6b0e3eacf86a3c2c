"""Variational open-domain retrieval objectives, priority sampling and training."""

from ._backend import backend_name
from .bounds import (
    BoundInput,
    BoundReport,
    LatentProblem,
    exact_elbo,
    exact_marginal_log_likelihood,
    exact_rvb,
    gradient_weights,
    normalizer_ratio_log_estimate,
    realm_objective,
    vod_objective,
)
from .errors import InvalidArgument, ResourceLimitError, VodError
from .gradients import GradientEstimate, exact_rvb_gradient, vod_gradient
from .mcqa import McqaInstance, OptionRetrievalState, mcqa_vod_objective, mcqa_vod_step, predict
from .retrieval import TruncatedDistribution, build_support, effective_sample_size, kl_divergence
from .sampling import (
    DiscreteDistribution,
    PrioritySample,
    ProductSample,
    estimate_weighted_sum,
    priority_sample,
    product_priority_sample,
)
from .scoring import Bm25Index, Corpus, FeatureSpace, ScoreModel, build_bm25_index, hybrid_posterior_score

__version__ = "0.1.0"
