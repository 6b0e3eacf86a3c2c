"""The VOD objective and exact single-latent oracles.

Notation used throughout: ``s`` are self-normalized priority weights drawn
from the proposal ``r``, ``log_zeta = f_theta - f_phi`` is the log ratio of
un-normalized retriever densities, and ``log v_i = ll_i + log_zeta_i -
log sum_j s_j zeta_j`` is the self-normalized importance weight of document
``i`` (``ll`` is the reader log-likelihood).  Everything stays in log space.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rng as _rng
from .errors import InvalidArgument
from .retrieval import TruncatedDistribution, build_support, effective_sample_size, logsumexp, softmax_on_support
from .sampling import DiscreteDistribution, PrioritySample

ALPHA_ONE_TOL = 1e-6


def check_alpha(alpha: float) -> float:
    alpha = float(alpha)
    if not 0.0 <= alpha <= 1.0:
        raise InvalidArgument(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha


def near_one(alpha: float) -> bool:
    return abs(1.0 - alpha) < ALPHA_ONE_TOL


def renyi_reduce(log_p: np.ndarray, log_w: np.ndarray, alpha: float) -> float:
    """``(1-alpha)^-1 log sum_i p_i w_i^(1-alpha)``, or ``sum_i p_i log w_i`` at alpha = 1."""
    if near_one(alpha):
        return float(np.exp(log_p) @ log_w)
    return logsumexp(log_p + (1.0 - alpha) * log_w) / (1.0 - alpha)


@dataclass(frozen=True)
class BoundInput:
    alpha: float
    sample: PrioritySample
    reader_loglik: np.ndarray
    log_zeta: np.ndarray

    def __post_init__(self):
        check_alpha(self.alpha)
        if len(self.sample) == 0:
            raise InvalidArgument("empty sample")
        ll = np.asarray(self.reader_loglik, dtype=np.float64)
        lz = np.asarray(self.log_zeta, dtype=np.float64)
        if ll.shape != self.sample.indices.shape or lz.shape != ll.shape:
            raise InvalidArgument("reader_loglik and log_zeta must align with the sample")
        object.__setattr__(self, "reader_loglik", ll)
        object.__setattr__(self, "log_zeta", lz)


@dataclass(frozen=True)
class BoundReport:
    value: float
    ess: float
    per_doc_norm_weights: np.ndarray


def normalizer_ratio_log_estimate(sample: PrioritySample, log_zeta) -> float:
    """Log of the self-normalized estimate of ``Z_theta / Z_phi``."""
    lz = np.asarray(log_zeta, dtype=np.float64)
    if len(sample) == 0 or lz.shape != sample.indices.shape:
        raise InvalidArgument("log_zeta must be non-empty and align with the sample")
    return logsumexp(sample.log_norm_weights + lz)


def log_importance_weights(inp: BoundInput) -> np.ndarray:
    """``log v_i`` for every sampled document."""
    return inp.reader_loglik + inp.log_zeta - normalizer_ratio_log_estimate(inp.sample, inp.log_zeta)


def gradient_weights(inp: BoundInput) -> np.ndarray:
    """Normalized per-document weights of the VOD gradient (``s`` at alpha = 1)."""
    log_s = inp.sample.log_norm_weights
    if near_one(inp.alpha):
        return inp.sample.norm_weights.copy()
    logits = log_s + (1.0 - inp.alpha) * (inp.reader_loglik + inp.log_zeta)
    return np.exp(logits - logsumexp(logits))


def vod_objective(inp: BoundInput) -> BoundReport:
    """Self-normalized Renyi estimate from a priority sample of the proposal."""
    log_s = inp.sample.log_norm_weights
    log_v = log_importance_weights(inp)
    value = renyi_reduce(log_s, log_v, inp.alpha)
    ess = effective_sample_size(np.exp(log_s + log_v - np.max(log_s + log_v)))
    return BoundReport(value, ess, gradient_weights(inp))


# -- single-latent test problem ---------------------------------------------


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


@dataclass
class LatentProblem:
    """One question with a single latent document, linear scorers and a fixed proposal.

    * reader: ``log p(a | d, q) = log sigmoid(reader_features[d] . reader_params)``
    * retriever: ``f_theta(d) = retriever_features[d] . retriever_params``
    * proposal: ``f_phi(d) = proposal_scores[d]`` (never differentiated)

    Both retrievers are truncated to ``support`` (the top-P ids under ``f_phi``).
    """

    reader_features: np.ndarray
    reader_params: np.ndarray
    retriever_features: np.ndarray
    retriever_params: np.ndarray
    proposal_scores: np.ndarray
    support: np.ndarray = field(default=None)

    def __post_init__(self):
        n = self.reader_features.shape[0]
        if self.retriever_features.shape[0] != n or self.proposal_scores.shape != (n,):
            raise InvalidArgument("feature tables and proposal scores must cover the same documents")
        if self.support is None:
            self.support = np.arange(n, dtype=np.int64)
        self.support = np.asarray(self.support, dtype=np.int64)

    @classmethod
    def random(cls, seed: _rng.Seed, n_docs: int, n_support: int | None = None, reader_dim: int = 3,
               retriever_dim: int = 4, spread: float = 1.0) -> "LatentProblem":
        g = _rng.generator(seed)
        proposal = g.normal(0.0, spread, n_docs)
        return cls(
            reader_features=g.normal(0.0, 1.0, (n_docs, reader_dim)),
            reader_params=g.normal(0.0, spread, reader_dim),
            retriever_features=g.normal(0.0, 1.0, (n_docs, retriever_dim)),
            retriever_params=g.normal(0.0, spread, retriever_dim),
            proposal_scores=proposal,
            support=build_support(proposal, n_support or n_docs),
        )

    @property
    def n_docs(self) -> int:
        return int(self.reader_features.shape[0])

    def with_params(self, reader_params=None, retriever_params=None) -> "LatentProblem":
        return replace(
            self,
            reader_params=self.reader_params if reader_params is None else np.asarray(reader_params, dtype=np.float64),
            retriever_params=self.retriever_params if retriever_params is None else np.asarray(retriever_params, dtype=np.float64),
        )

    # model calls; a counting subclass overrides these
    def reader_loglik(self, doc_ids) -> np.ndarray:
        return _log_sigmoid(self.reader_features[doc_ids] @ self.reader_params)

    def reader_loglik_grad(self, doc_ids) -> np.ndarray:
        x = self.reader_features[doc_ids]
        return (1.0 - np.exp(_log_sigmoid(x @ self.reader_params)))[:, None] * x

    def retriever_score(self, doc_ids) -> np.ndarray:
        return self.retriever_features[doc_ids] @ self.retriever_params

    def retriever_score_grad(self, doc_ids) -> np.ndarray:
        return self.retriever_features[doc_ids].copy()

    def proposal_score(self, doc_ids) -> np.ndarray:
        return self.proposal_scores[doc_ids]

    def retriever_log_normalizer(self) -> float:
        """``log Z_theta`` over the support (oracle use only)."""
        return logsumexp(self.retriever_score(self.support))

    # distributions on the support
    def proposal_distribution(self) -> TruncatedDistribution:
        return softmax_on_support(self.proposal_score(self.support), self.support)

    def sampling_distribution(self) -> DiscreteDistribution:
        """The proposal as a :class:`DiscreteDistribution` (ids ascending) for priority sampling."""
        ids = np.sort(self.support)
        return DiscreteDistribution.from_logits(ids, self.proposal_score(ids))


def _exhaustive_terms(problem: LatentProblem):
    ids = problem.support
    ll = problem.reader_loglik(ids)
    log_prior = problem.retriever_score(ids) - problem.retriever_log_normalizer()
    log_r = problem.proposal_distribution().log_probs
    return ll, log_prior, log_r


def exact_marginal_log_likelihood(problem: LatentProblem) -> float:
    """``log sum_d p(a | d, q) p_theta(d | q)`` over the whole support."""
    ll, log_prior, _ = _exhaustive_terms(problem)
    return logsumexp(ll + log_prior)


def exact_rvb(alpha: float, problem: LatentProblem) -> float:
    """Renyi bound with the proposal as variational distribution; the ELBO at alpha = 1."""
    alpha = check_alpha(alpha)
    ll, log_prior, log_r = _exhaustive_terms(problem)
    return renyi_reduce(log_r, ll + log_prior - log_r, alpha)


def exact_elbo(problem: LatentProblem) -> float:
    ll, log_prior, log_r = _exhaustive_terms(problem)
    return float(np.exp(log_r) @ (ll + log_prior - log_r))


def iw_rvb_with_replacement(alpha: float, problem: LatentProblem, k: int, seed: _rng.Seed) -> float:
    """Importance-weighted Renyi bound from ``k`` i.i.d. proposal draws."""
    alpha = check_alpha(alpha)
    if int(k) != k or k < 1:
        raise InvalidArgument(f"k must be a positive integer, got {k!r}")
    ll, log_prior, log_r = _exhaustive_terms(problem)
    draws = _rng.generator(seed).choice(log_r.size, size=int(k), p=np.exp(log_r) / np.exp(log_r).sum())
    log_w = (ll + log_prior - log_r)[draws]
    if near_one(alpha):
        return float(log_w.mean())
    return (logsumexp((1.0 - alpha) * log_w) - np.log(k)) / (1.0 - alpha)


def bound_input(problem: LatentProblem, sample: PrioritySample, alpha: float) -> BoundInput:
    """Evaluate the models on the sampled documents only: K reader and K+1 retriever calls."""
    ids = sample.indices
    return BoundInput(
        alpha=alpha,
        sample=sample,
        reader_loglik=problem.reader_loglik(ids),
        log_zeta=problem.retriever_score(ids) - problem.proposal_score(ids),
    )


def vod_objective_for(problem: LatentProblem, sample: PrioritySample, alpha: float) -> BoundReport:
    return vod_objective(bound_input(problem, sample, alpha))


def realm_objective(sample: PrioritySample, problem: LatentProblem) -> float:
    """Top-K truncated marginal likelihood; requires a sample covering the whole support."""
    if not sample.exhaustive or sample.support_size != problem.support.size:
        raise InvalidArgument("the REALM objective needs an exhaustive sample of the support")
    return vod_objective_for(problem, sample, 0.0).value


class CountingProblem(LatentProblem):
    """A :class:`LatentProblem` that counts model evaluations.

    Each retriever-score call is charged one query encoding plus one per document.
    """

    def __post_init__(self):
        super().__post_init__()
        self.reset_counts()

    def reset_counts(self) -> None:
        self.reader_calls = 0
        self.retriever_calls = 0
        self.normalizer_calls = 0

    @classmethod
    def wrap(cls, problem: LatentProblem) -> "CountingProblem":
        return cls(problem.reader_features, problem.reader_params, problem.retriever_features,
                   problem.retriever_params, problem.proposal_scores, problem.support)

    def reader_loglik(self, doc_ids):
        self.reader_calls += int(np.size(doc_ids))
        return super().reader_loglik(doc_ids)

    def reader_loglik_grad(self, doc_ids):
        self.reader_calls += int(np.size(doc_ids))
        return super().reader_loglik_grad(doc_ids)

    def retriever_score(self, doc_ids):
        self.retriever_calls += int(np.size(doc_ids)) + 1
        return super().retriever_score(doc_ids)

    def retriever_score_grad(self, doc_ids):
        self.retriever_calls += int(np.size(doc_ids)) + 1
        return super().retriever_score_grad(doc_ids)

    def retriever_log_normalizer(self) -> float:
        self.normalizer_calls += 1
        return super().retriever_log_normalizer()
