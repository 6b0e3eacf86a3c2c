"""Analytic VOD gradients, exact Renyi-bound gradients and a finite-difference checker."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .bounds import (
    BoundInput,
    LatentProblem,
    bound_input,
    check_alpha,
    gradient_weights,
    near_one,
)
from .errors import InvalidArgument
from .retrieval import logsumexp
from .sampling import PrioritySample


@dataclass(frozen=True)
class GradientEstimate:
    reader_grad: np.ndarray
    retriever_grad: np.ndarray

    def __post_init__(self):
        for g in (self.reader_grad, self.retriever_grad):
            if not np.all(np.isfinite(g)):
                raise InvalidArgument("non-finite gradient")

    def scaled(self, factor: float) -> "GradientEstimate":
        return GradientEstimate(self.reader_grad * factor, self.retriever_grad * factor)


def _retriever_mix(sample: PrioritySample, log_zeta: np.ndarray) -> np.ndarray:
    """Self-normalized weights ``s_j zeta_j / sum_k s_k zeta_k``."""
    logits = sample.log_norm_weights + np.asarray(log_zeta, dtype=np.float64)
    return np.exp(logits - logsumexp(logits))


def retriever_logprob_grad(sample: PrioritySample, log_zeta, score_grads: np.ndarray, target_index: int) -> np.ndarray:
    """Estimate of ``grad log p_theta(d_t | q)`` from the sample, without ``Z_theta``."""
    score_grads = np.asarray(score_grads, dtype=np.float64)
    if not 0 <= target_index < len(sample):
        raise InvalidArgument(f"target index {target_index} outside the sample")
    if score_grads.shape[0] != len(sample):
        raise InvalidArgument("one score gradient per sampled document is required")
    return score_grads[target_index] - _retriever_mix(sample, log_zeta) @ score_grads


def vod_gradient(alpha: float, inp: BoundInput, reader_grads: np.ndarray, score_grads: np.ndarray) -> GradientEstimate:
    """Gradient of the VOD objective for disjoint reader / retriever parameter blocks.

    ``reader_grads[i]`` is ``grad log p(a | d_i, q)`` and ``score_grads[i]`` is
    ``grad f_theta(d_i, q)``, both for the sampled documents in sample order.
    """
    check_alpha(alpha)
    if alpha != inp.alpha:
        inp = BoundInput(alpha, inp.sample, inp.reader_loglik, inp.log_zeta)
    reader_grads = np.asarray(reader_grads, dtype=np.float64)
    score_grads = np.asarray(score_grads, dtype=np.float64)
    k = len(inp.sample)
    if reader_grads.shape[0] != k or score_grads.shape[0] != k:
        raise InvalidArgument("per-document gradients must align with the sample")
    weights = gradient_weights(inp)
    # sum_i W_i h_i with sum_i W_i = 1 collapses to two weighted means
    mix = _retriever_mix(inp.sample, inp.log_zeta)
    return GradientEstimate(weights @ reader_grads, (weights - mix) @ score_grads)


def vod_gradient_for(problem: LatentProblem, sample: PrioritySample, alpha: float) -> GradientEstimate:
    ids = sample.indices
    inp = bound_input(problem, sample, alpha)
    return vod_gradient(alpha, inp, problem.reader_loglik_grad(ids), problem.retriever_score_grad(ids))


def exact_rvb_gradient(alpha: float, problem: LatentProblem) -> GradientEstimate:
    """Exhaustive gradient of the Renyi bound using the exact softmax retriever gradient."""
    alpha = check_alpha(alpha)
    ids = problem.support
    ll = problem.reader_loglik(ids)
    f = problem.retriever_score(ids)
    log_prior = f - logsumexp(f)
    log_r = problem.proposal_distribution().log_probs
    if near_one(alpha):
        weights = np.exp(log_r)
    else:
        logits = log_r + (1.0 - alpha) * (ll + log_prior - log_r)
        weights = np.exp(logits - logsumexp(logits))
    prior = np.exp(log_prior)
    score_grads = problem.retriever_score_grad(ids)
    return GradientEstimate(weights @ problem.reader_loglik_grad(ids), (weights - prior) @ score_grads)


def finite_difference(objective: Callable[[np.ndarray], float], theta, h: float = 1e-6) -> np.ndarray:
    """Central differences of ``objective`` at ``theta``, one coordinate at a time."""
    if not h > 0:
        raise InvalidArgument(f"step must be positive, got {h!r}")
    theta = np.array(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up.flat[i] += h
        down.flat[i] -= h
        f_up, f_down = float(objective(up)), float(objective(down))
        if not (np.isfinite(f_up) and np.isfinite(f_down)):
            raise InvalidArgument(f"objective is not finite near coordinate {i}")
        grad.flat[i] = (f_up - f_down) / (2.0 * h)
    return grad
