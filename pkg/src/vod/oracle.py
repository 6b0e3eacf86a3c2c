"""Randomized consistency checks of the estimators against exhaustive oracles.

Each check returns a :class:`CheckResult` with the largest error it observed.
``fault`` adds a constant to one sampled log density ratio inside the VOD
paths, a negative control that must make the consistency checks fail.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng as _rng
from .bounds import (
    BoundInput,
    CountingProblem,
    LatentProblem,
    bound_input,
    exact_elbo,
    exact_marginal_log_likelihood,
    exact_rvb,
    realm_objective,
    vod_objective,
)
from .gradients import exact_rvb_gradient, finite_difference, vod_gradient
from .mcqa import McqaInstance, OptionRetrievalState, exact_mcqa_rvb, mcqa_vod_step
from .retrieval import logsumexp, softmax_on_support
from .sampling import DiscreteDistribution, estimate_weighted_sum, priority_sample
from .scoring import DUAL, LINEAR, Corpus, FeatureSpace, ScoreModel

ALPHAS = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    max_error: float
    tolerance: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} max_error={self.max_error:.3e} tolerance={self.tolerance:.1e}"


def relative_error(estimate, reference, floor: float = 1e-4) -> np.ndarray:
    """``|a - b| / max(|b|, floor)`` per coordinate; the floor guards near-zero references."""
    estimate, reference = np.asarray(estimate), np.asarray(reference)
    return np.abs(estimate - reference) / np.maximum(np.abs(reference), floor)


def exhaustive_sample(problem: LatentProblem):
    return priority_sample(problem.sampling_distribution(), problem.support.size, 0)


def _faulty(inp: BoundInput, fault: float) -> BoundInput:
    if not fault:
        return inp
    lz = inp.log_zeta.copy()
    lz[0] += fault
    return BoundInput(inp.alpha, inp.sample, inp.reader_loglik, lz)


def random_problem(seed, max_docs: int = 32, truncate: bool = False) -> LatentProblem:
    g = _rng.generator(_rng.child(seed, 0))
    n = int(g.integers(2, max_docs + 1))
    p = int(g.integers(1, n + 1)) if truncate else n
    return LatentProblem.random(_rng.child(seed, 1), n, p, spread=float(g.uniform(0.3, 2.0)))


# -- single latent ---------------------------------------------------------


def check_consistency(n: int = 100, seed=0, fault: float = 0.0) -> CheckResult:
    err = 0.0
    for i in range(n):
        pr = random_problem(_rng.child(seed, i))
        sample = exhaustive_sample(pr)
        for a in ALPHAS:
            got = vod_objective(_faulty(bound_input(pr, sample, a), fault)).value
            err = max(err, abs(got - exact_rvb(a, pr)))
    return CheckResult("vod-objective-consistency", err <= 1e-9, err, 1e-9)


def check_bound_ordering(n: int = 100, seed=0) -> CheckResult:
    worst = 0.0
    grid = np.linspace(0.0, 1.0, 11)
    for i in range(n):
        pr = random_problem(_rng.child(seed, i))
        elbo, mll = exact_elbo(pr), exact_marginal_log_likelihood(pr)
        values = np.array([exact_rvb(a, pr) for a in grid])
        worst = max(worst, elbo - values.min(), values.max() - mll, float(np.max(np.diff(values), initial=0.0)))
    return CheckResult("bound-ordering-and-monotonicity", worst <= 1e-9, max(worst, 0.0), 1e-9)


def check_realm(n: int = 100, seed=0, fault: float = 0.0) -> CheckResult:
    err = 0.0
    for i in range(n):
        pr = random_problem(_rng.child(seed, i), truncate=True)
        sample = exhaustive_sample(pr)
        value = vod_objective(_faulty(bound_input(pr, sample, 0.0), fault)).value
        ll = pr.reader_loglik(pr.support)
        f = pr.retriever_score(pr.support)
        truncated = logsumexp(ll + f - logsumexp(f))
        err = max(err, abs(value - truncated), abs(realm_objective(sample, pr) - truncated) if not fault else 0.0)
    return CheckResult("realm-equivalence", err <= 1e-9, err, 1e-9)


def check_evaluation_counts(seed=0) -> CheckResult:
    """K reader calls, K + 1 retriever calls and no normalizer for the VOD objective and gradient."""
    bad = 0
    for i, k in enumerate((1, 3, 8)):
        pr = CountingProblem.wrap(LatentProblem.random(_rng.child(seed, i), 24))
        sample = priority_sample(pr.sampling_distribution(), k, _rng.child(seed, i, 1))
        pr.reset_counts()
        inp = bound_input(pr, sample, 0.5)
        vod_objective(inp)
        bad += (pr.reader_calls, pr.retriever_calls, pr.normalizer_calls) != (k, k + 1, 0)
        pr.reset_counts()
        vod_gradient(0.5, inp, pr.reader_loglik_grad(sample.indices), pr.retriever_score_grad(sample.indices))
        bad += pr.normalizer_calls != 0
    return CheckResult("evaluation-counts", bad == 0, float(bad), 0.0)


def check_linear_scaling(seed=0) -> CheckResult:
    """Evaluation counts grow with K for the estimator and with N for the oracle."""
    bad = 0
    for n in (8, 16, 32):
        pr = CountingProblem.wrap(LatentProblem.random(_rng.child(seed, n), n))
        for k in (2, 4, 8):
            sample = priority_sample(pr.sampling_distribution(), k, 0)
            pr.reset_counts()
            vod_objective(bound_input(pr, sample, 0.0))
            bad += pr.reader_calls != k
        pr.reset_counts()
        exact_rvb(0.0, pr)
        bad += pr.reader_calls != n
    return CheckResult("linear-scaling-counts", bad == 0, float(bad), 0.0)


def check_gradient_consistency(n: int = 50, seed=0, fault: float = 0.0) -> CheckResult:
    err = 0.0
    for i in range(n):
        pr = random_problem(_rng.child(seed, i), max_docs=16)
        sample = exhaustive_sample(pr)
        ids = sample.indices
        for a in ALPHAS:
            inp = _faulty(bound_input(pr, sample, a), fault)
            got = vod_gradient(a, inp, pr.reader_loglik_grad(ids), pr.retriever_score_grad(ids))
            ref = exact_rvb_gradient(a, pr)
            err = max(err, np.abs(got.reader_grad - ref.reader_grad).max(), np.abs(got.retriever_grad - ref.retriever_grad).max())
    return CheckResult("vod-gradient-consistency", err <= 1e-9, err, 1e-9)


def check_gradient_finite_difference(n: int = 10, seed=0) -> CheckResult:
    err = 0.0
    for i in range(n):
        pr = random_problem(_rng.child(seed, i), max_docs=12)
        for a in (0.0, 0.5, 1.0):
            ref = exact_rvb_gradient(a, pr)
            fd_r = finite_difference(lambda t: exact_rvb(a, pr.with_params(reader_params=t)), pr.reader_params)
            fd_f = finite_difference(lambda t: exact_rvb(a, pr.with_params(retriever_params=t)), pr.retriever_params)
            err = max(err, relative_error(ref.reader_grad, fd_r).max(), relative_error(ref.retriever_grad, fd_f).max())
    return CheckResult("rvb-gradient-finite-difference", err <= 1e-5, err, 1e-5)


def check_realm_gradient(n: int = 10, seed=0) -> CheckResult:
    err = 0.0
    for i in range(n):
        pr = random_problem(_rng.child(seed, i), max_docs=12, truncate=True)
        sample = exhaustive_sample(pr)
        ids = sample.indices
        got = vod_gradient(0.0, bound_input(pr, sample, 0.0), pr.reader_loglik_grad(ids), pr.retriever_score_grad(ids))
        fd_r = finite_difference(lambda t: realm_objective(sample, pr.with_params(reader_params=t)), pr.reader_params)
        fd_f = finite_difference(lambda t: realm_objective(sample, pr.with_params(retriever_params=t)), pr.retriever_params)
        err = max(err, relative_error(got.reader_grad, fd_r).max(), relative_error(got.retriever_grad, fd_f).max())
    return CheckResult("realm-gradient-finite-difference", err <= 1e-5, err, 1e-5)


def check_gradient_weights(n: int = 50, seed=0) -> CheckResult:
    err = 0.0
    for i in range(n):
        pr = random_problem(_rng.child(seed, i))
        k = int(_rng.generator(_rng.child(seed, i, 2)).integers(1, pr.support.size + 1))
        sample = priority_sample(pr.sampling_distribution(), k, _rng.child(seed, i, 3))
        for a in ALPHAS:
            w = vod_objective(bound_input(pr, sample, a)).per_doc_norm_weights
            err = max(err, abs(w.sum() - 1.0), float(-w.min()))
    return CheckResult("gradient-weights-probability-vector", err <= 1e-10, err, 1e-10)


def check_proposal_untouched(seed=0) -> CheckResult:
    """The proposal scores are inputs only: no gradient block and no mutation."""
    pr = LatentProblem.random(seed, 16)
    before = pr.proposal_scores.copy()
    sample = exhaustive_sample(pr)
    ids = sample.indices
    g = vod_gradient(0.5, bound_input(pr, sample, 0.5), pr.reader_loglik_grad(ids), pr.retriever_score_grad(ids))
    sizes_ok = g.reader_grad.size == pr.reader_params.size and g.retriever_grad.size == pr.retriever_params.size
    drift = float(np.abs(pr.proposal_scores - before).max())
    return CheckResult("proposal-not-differentiated", sizes_ok and drift == 0.0, drift, 0.0)


def check_priority_exhaustive(n: int = 50, seed=0) -> CheckResult:
    err = 0.0
    for i in range(n):
        g = _rng.generator(_rng.child(seed, i))
        size = int(g.integers(1, 30))
        dist = DiscreteDistribution.from_logits(np.arange(size), g.normal(0, 2, size))
        values = g.normal(size=size)
        sample = priority_sample(dist, size + int(g.integers(0, 3)), _rng.child(seed, i, 1))
        exact = float(dist.probs @ values)
        err = max(err, abs(estimate_weighted_sum(sample, values, True) - exact),
                  abs(estimate_weighted_sum(sample, values, False) - exact))
    return CheckResult("priority-sampling-exhaustive", err <= 1e-12, err, 1e-12)


# -- multiple choice -------------------------------------------------------


@dataclass
class RandomMcqa:
    space: FeatureSpace
    instance: McqaInstance
    proposals: list
    reader: ScoreModel
    retriever: ScoreModel


def random_mcqa(seed, max_docs: int = 6, max_options: int = 3, kind: str = LINEAR) -> RandomMcqa:
    g = _rng.generator(_rng.child(seed, 0))
    n = int(g.integers(2, max_docs + 1))
    m = int(g.integers(2, max_options + 1))
    vocab = [f"t{i}" for i in range(8)]
    corpus = Corpus.from_tokens([list(g.choice(vocab, int(g.integers(2, 6)))) for _ in range(n)])
    space = FeatureSpace(corpus, n_indicators=4)
    inst = McqaInstance(tuple(g.choice(vocab, 3)), tuple((str(g.choice(vocab)),) for _ in range(m)), int(g.integers(m)))
    proposals = []
    for _ in range(m):
        p = int(g.integers(1, n + 1))
        support = np.sort(g.choice(n, p, replace=False))
        proposals.append(softmax_on_support(g.normal(0, 1, p), support))
    std = 0.5 if kind == LINEAR else 0.8
    reader = ScoreModel.random(space, kind, _rng.child(seed, 1), dim=3, std=std)
    retriever = ScoreModel.random(space, kind, _rng.child(seed, 2), dim=3, std=std)
    return RandomMcqa(space, inst, proposals, reader, retriever)


def exhaustive_state(case: RandomMcqa) -> OptionRetrievalState:
    return OptionRetrievalState.draw(case.proposals, max(len(p) for p in case.proposals), 0)


def check_mcqa_consistency(n: int = 20, seed=0, fault: float = 0.0) -> CheckResult:
    err = 0.0
    for i in range(n):
        case = random_mcqa(_rng.child(seed, i))
        state = exhaustive_state(case)
        if fault:
            # shift one cached proposal score after sampling, which perturbs its zeta only
            first = case.proposals[0]
            scores = first.scores.copy()
            scores[0] += fault
            state = OptionRetrievalState((softmax_on_support(scores, first.support),) + state.proposals[1:], state.samples)
        for a in ALPHAS:
            got = mcqa_vod_step(a, state, case.reader, case.retriever, case.instance, case.space).report.value
            ref = exact_mcqa_rvb(a, case.proposals, case.reader, case.retriever, case.instance, case.space)
            err = max(err, abs(got - ref))
    return CheckResult("mcqa-objective-consistency", err <= 1e-9, err, 1e-9)


def check_mcqa_gradient(n: int = 6, seed=0) -> CheckResult:
    err = 0.0
    for i in range(n):
        case = random_mcqa(_rng.child(seed, i), kind=(LINEAR, DUAL)[i % 2])
        state = exhaustive_state(case)
        for a in (0.0, 0.5, 1.0):
            got = mcqa_vod_step(a, state, case.reader, case.retriever, case.instance, case.space).gradient

            def obj(which: str) -> Callable[[np.ndarray], float]:
                def f(t):
                    rd, rt = case.reader.copy(), case.retriever.copy()
                    (rd if which == "reader" else rt).params = t
                    return exact_mcqa_rvb(a, case.proposals, rd, rt, case.instance, case.space)
                return f

            fd_r = finite_difference(obj("reader"), case.reader.params)
            fd_f = finite_difference(obj("retriever"), case.retriever.params)
            err = max(err, relative_error(got.reader_grad, fd_r).max(), relative_error(got.retriever_grad, fd_f).max())
    return CheckResult("mcqa-gradient-finite-difference", err <= 1e-5, err, 1e-5)


def run_suite(seed=0, fault: float = 0.0, quick: bool = False) -> list[CheckResult]:
    """Every check, in a fixed order. ``quick`` shrinks instance counts for smoke tests."""
    scale = 0.2 if quick else 1.0

    def cnt(x: int) -> int:
        return max(1, int(x * scale))

    return [
        check_priority_exhaustive(cnt(50), _rng.child(seed, 1)),
        check_consistency(cnt(100), _rng.child(seed, 2), fault),
        check_bound_ordering(cnt(100), _rng.child(seed, 3)),
        check_realm(cnt(100), _rng.child(seed, 4), fault),
        check_evaluation_counts(_rng.child(seed, 5)),
        check_linear_scaling(_rng.child(seed, 6)),
        check_gradient_consistency(cnt(50), _rng.child(seed, 7), fault),
        check_gradient_finite_difference(cnt(10), _rng.child(seed, 8)),
        check_realm_gradient(cnt(10), _rng.child(seed, 9)),
        check_gradient_weights(cnt(50), _rng.child(seed, 10)),
        check_proposal_untouched(_rng.child(seed, 11)),
        check_mcqa_consistency(cnt(20), _rng.child(seed, 12), fault),
        check_mcqa_gradient(cnt(6), _rng.child(seed, 13)),
    ]


def timed_suite(seed=0, fault: float = 0.0, quick: bool = False) -> tuple[list[CheckResult], float]:
    start = time.perf_counter()
    results = run_suite(seed, fault, quick)
    return results, time.perf_counter() - start
