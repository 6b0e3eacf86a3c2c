"""Multiple-choice reader-retriever model with one latent document per option.

Each option ``j`` gets its own query ``q_j = [q; a_j]``, its own truncated
proposal over a top-P support and its own priority sample.  The reader scores a
tuple ``D = (d_1..d_M)`` with ``softmax_j g(d_j, q_j)``, so only ``M * K`` reader
scores are needed even though the objective enumerates all ``K^M`` tuples.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import rng as _rng
from ._backend import kernels
from .bounds import BoundReport, check_alpha, renyi_reduce
from .errors import InvalidArgument, ResourceLimitError
from .gradients import GradientEstimate
from .retrieval import TruncatedDistribution, logsumexp
from .sampling import DiscreteDistribution, PrioritySample, product_priority_sample
from .scoring import LINEAR, FeatureSpace, QueryFileRecord, ScoreModel, score_and_grad_batch, score_docs

DEFAULT_ENUMERATION_CAP = 65536


@dataclass(frozen=True)
class McqaInstance:
    question: tuple[str, ...]
    options: tuple[tuple[str, ...], ...]
    correct_index: int
    qid: str = ""
    evidence_doc: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "question", tuple(self.question))
        object.__setattr__(self, "options", tuple(tuple(o) for o in self.options))
        if not self.question:
            raise InvalidArgument("question must be non-empty")
        # a single option is accepted only as the degenerate reduction to one latent
        if len(self.options) < 1:
            raise InvalidArgument("need at least one option")
        if not 0 <= self.correct_index < len(self.options):
            raise InvalidArgument(f"correct index {self.correct_index} out of range")

    @property
    def n_options(self) -> int:
        return len(self.options)

    @property
    def option_queries(self) -> tuple[tuple[str, ...], ...]:
        return tuple(self.question + opt for opt in self.options)

    @classmethod
    def from_record(cls, rec: QueryFileRecord) -> "McqaInstance":
        if len(rec.options) < 2:
            raise InvalidArgument(f"question {rec.qid} has fewer than two options")
        return cls(rec.question, rec.options, rec.correct_index, rec.qid)

    def to_record(self) -> QueryFileRecord:
        return QueryFileRecord(self.qid, self.question, self.options, self.correct_index)


def _sampling_distribution(proposal: TruncatedDistribution) -> DiscreteDistribution:
    order = np.argsort(proposal.support, kind="stable")
    return DiscreteDistribution.from_logits(proposal.support[order], proposal.scores[order])


@dataclass(frozen=True)
class OptionRetrievalState:
    """Per-option proposals (support + cached ``f_phi``) and their priority samples.

    ``features`` optionally holds, per option, the linear feature rows of the
    option query against every support document (aligned with the support);
    linear score models then read scores and gradients from it directly.
    """

    proposals: tuple[TruncatedDistribution, ...]
    samples: tuple[PrioritySample, ...]
    features: tuple[np.ndarray, ...] | None = None
    _positions: tuple[dict, ...] = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        if len(self.proposals) != len(self.samples) or not self.proposals:
            raise InvalidArgument("need one sample per option proposal")
        if self.features is not None and len(self.features) != len(self.proposals):
            raise InvalidArgument("need one feature table per option")
        object.__setattr__(self, "_positions", tuple(
            {d: i for i, d in enumerate(p.support.tolist())} for p in self.proposals
        ))

    @classmethod
    def draw(cls, proposals: Sequence[TruncatedDistribution], k: int, seed: _rng.Seed,
             features: Sequence[np.ndarray] | None = None) -> "OptionRetrievalState":
        dists = [_sampling_distribution(p) for p in proposals]
        samples = product_priority_sample(dists, k, seed).per_option_samples
        return cls(tuple(proposals), samples, None if features is None else tuple(features))

    @property
    def n_options(self) -> int:
        return len(self.proposals)

    def positions(self, option: int, doc_ids) -> np.ndarray:
        table = self._positions[option]
        try:
            return np.array([table[int(d)] for d in doc_ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidArgument(f"document {exc.args[0]} is not on the support of option {option}") from None

    def proposal_scores(self, option: int, doc_ids) -> np.ndarray:
        return self.proposals[option].scores[self.positions(option, doc_ids)]


@dataclass
class EvalCounter:
    """Counts score-model evaluations (one per query-document pair)."""

    reader: int = 0
    retriever: int = 0


def option_logits(reader: ScoreModel, docs: Sequence[int], instance: McqaInstance, space: FeatureSpace) -> np.ndarray:
    """Reader logits ``g(d_j, q_j)`` for one document per option."""
    if len(docs) != instance.n_options:
        raise InvalidArgument(f"need {instance.n_options} documents, got {len(docs)}")
    return np.array([
        score_docs(reader, q, space, [d])[0] for q, d in zip(instance.option_queries, docs)
    ])


def _check_shapes(state: OptionRetrievalState, instance: McqaInstance, cap: int) -> None:
    if state.n_options != instance.n_options:
        raise InvalidArgument("retrieval state and instance disagree on the number of options")
    total = int(np.prod([len(s) for s in state.samples]))
    if total > cap:
        raise ResourceLimitError(f"{total} document combinations exceed the enumeration cap of {cap}")


def _pair_scores(model, state, option, query, ids, space, with_grads):
    if state.features is not None and model.kind == LINEAR:
        rows = state.features[option][state.positions(option, ids)] * model.scale
        return (rows @ model.params, rows) if with_grads else (rows @ model.params, None)
    if with_grads:
        return score_and_grad_batch(model, query, ids, space)
    return score_docs(model, query, space, ids), None


def _padded_terms(state, reader, retriever, instance, space, counter, with_grads):
    """Per-option terms padded to ``(M, Kmax)``; a ``None`` retriever means ``zeta = 1``."""
    m = instance.n_options
    counts = np.array([len(s) for s in state.samples], dtype=np.int64)
    kmax = int(counts.max())
    log_s = np.zeros((m, kmax))
    log_zeta = np.zeros((m, kmax))
    logits = np.zeros((m, kmax))
    reader_grads, score_grads = [], []
    for j, (q, sample) in enumerate(zip(instance.option_queries, state.samples)):
        ids = sample.indices
        k = ids.size
        g, dg = _pair_scores(reader, state, j, q, ids, space, with_grads)
        reader_grads.append(dg)
        if counter is not None:
            counter.reader += k
        if retriever is not None:
            f, df = _pair_scores(retriever, state, j, q, ids, space, with_grads)
            score_grads.append(df)
            log_zeta[j, :k] = f - state.proposal_scores(j, ids)
            if counter is not None:
                counter.retriever += k
        log_s[j, :k] = sample.log_norm_weights
        logits[j, :k] = g
    return counts, log_s, log_zeta, logits, reader_grads, score_grads


def mcqa_vod_objective(
    alpha: float,
    state: OptionRetrievalState,
    reader: ScoreModel,
    retriever: ScoreModel | None,
    instance: McqaInstance,
    space: FeatureSpace,
    cap: int = DEFAULT_ENUMERATION_CAP,
    counter: EvalCounter | None = None,
) -> BoundReport:
    """VOD estimate of the Renyi bound for the correct answer over all sampled tuples."""
    alpha = check_alpha(alpha)
    _check_shapes(state, instance, cap)
    counts, log_s, log_zeta, logits, _, _ = _padded_terms(state, reader, retriever, instance, space, counter, False)
    value, ess, weights, _, _ = kernels.product_enumerate(log_s, log_zeta, logits, counts, instance.correct_index, alpha)
    return BoundReport(float(value), float(ess), weights)


@dataclass(frozen=True)
class McqaStepResult:
    gradient: GradientEstimate
    report: BoundReport
    answer_values: np.ndarray


def mcqa_vod_step(
    alpha: float,
    state: OptionRetrievalState,
    reader: ScoreModel,
    retriever: ScoreModel | None,
    instance: McqaInstance,
    space: FeatureSpace,
    cap: int = DEFAULT_ENUMERATION_CAP,
    counter: EvalCounter | None = None,
) -> McqaStepResult:
    """Objective, gradient and per-answer likelihood estimates (alpha = 0) from one sample."""
    alpha = check_alpha(alpha)
    _check_shapes(state, instance, cap)
    counts, log_s, log_zeta, logits, reader_grads, score_grads = _padded_terms(
        state, reader, retriever, instance, space, counter, True
    )
    value, ess, weights, marginal, reader_coef = kernels.product_enumerate(
        log_s, log_zeta, logits, counts, instance.correct_index, alpha
    )
    star = instance.correct_index
    d_reader = marginal[star, : counts[star]] @ reader_grads[star]
    d_retriever = np.zeros(0 if retriever is None else retriever.params.size)
    for j in range(instance.n_options):
        k = int(counts[j])
        d_reader = d_reader - reader_coef[j, :k] @ reader_grads[j]
        if retriever is None:
            continue
        mix_logits = log_s[j, :k] + log_zeta[j, :k]
        mix = np.exp(mix_logits - logsumexp(mix_logits))
        d_retriever += (marginal[j, :k] - mix) @ score_grads[j]
    answers = kernels.product_values(log_s, log_zeta, logits, counts, 0.0)
    return McqaStepResult(
        GradientEstimate(d_reader, d_retriever),
        BoundReport(float(value), float(ess), weights),
        np.asarray(answers),
    )


def mcqa_vod_gradient(alpha, state, reader, retriever, instance, space, cap=DEFAULT_ENUMERATION_CAP, counter=None) -> GradientEstimate:
    return mcqa_vod_step(alpha, state, reader, retriever, instance, space, cap, counter).gradient


def answer_values(
    alpha: float,
    state: OptionRetrievalState,
    reader: ScoreModel,
    retriever: ScoreModel | None,
    instance: McqaInstance,
    space: FeatureSpace,
    cap: int = DEFAULT_ENUMERATION_CAP,
) -> np.ndarray:
    """The VOD estimate with every option in turn treated as the answer (same sample)."""
    alpha = check_alpha(alpha)
    _check_shapes(state, instance, cap)
    counts, log_s, log_zeta, logits, _, _ = _padded_terms(state, reader, retriever, instance, space, None, False)
    return np.asarray(kernels.product_values(log_s, log_zeta, logits, counts, alpha))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - np.max(x))
    return e / e.sum()


def mc_eval(
    instance: McqaInstance,
    reader: ScoreModel,
    retriever: ScoreModel | None,
    space: FeatureSpace,
    state_factory: Callable[[_rng.Seed], OptionRetrievalState],
    C: int,
    alpha: float = 0.0,
    seed: _rng.Seed = 0,
) -> np.ndarray:
    """Average over ``C`` independent samples of the option softmax of the per-answer estimates."""
    if int(C) != C or C < 1:
        raise InvalidArgument(f"C must be a positive integer, got {C!r}")
    probs = np.zeros(instance.n_options)
    for c in range(int(C)):
        state = state_factory(_rng.child(seed, c))
        probs += _softmax(answer_values(alpha, state, reader, retriever, instance, space))
    return probs / C


def predict(probabilities) -> int:
    """Argmax with ties going to the smallest index."""
    p = np.asarray(probabilities, dtype=np.float64)
    if p.size == 0:
        raise InvalidArgument("empty probability vector")
    return int(np.argmax(p))


def write_predictions(rows: Sequence[tuple[str, np.ndarray]], path) -> None:
    """Write ``<qid>\\t<predicted_index>\\t<p_0,...,p_{M-1}>`` lines."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid, probs in rows:
            fh.write(f"{qid}\t{predict(probs)}\t{','.join(f'{x:.10g}' for x in probs)}\n")


# -- brute-force oracles -----------------------------------------------------


def _exhaustive_tuples(proposals, reader, retriever, instance, space):
    """Yield ``(log p(a*|D), log p_theta(D), log r(D))`` for every tuple of support documents."""
    per_option = []
    for q, prop in zip(instance.option_queries, proposals):
        ids = prop.support
        g = score_docs(reader, q, space, ids)
        f = score_docs(retriever, q, space, ids)
        log_prior = f - logsumexp(f)
        per_option.append(list(zip(g.tolist(), log_prior.tolist(), prop.log_probs.tolist())))
    star = instance.correct_index
    for combo in itertools.product(*per_option):
        g = np.array([c[0] for c in combo])
        yield (g[star] - logsumexp(g), sum(c[1] for c in combo), sum(c[2] for c in combo))


def exact_mcqa_terms(proposals, reader, retriever, instance, space):
    rows = np.array(list(_exhaustive_tuples(proposals, reader, retriever, instance, space)))
    return rows[:, 0], rows[:, 1], rows[:, 2]


def exact_mcqa_marginal_log_likelihood(proposals, reader, retriever, instance, space) -> float:
    """``log p(a* | Q)`` summed over every tuple of truncated-support documents."""
    ll, log_prior, _ = exact_mcqa_terms(proposals, reader, retriever, instance, space)
    return logsumexp(ll + log_prior)


def exact_mcqa_rvb(alpha, proposals, reader, retriever, instance, space) -> float:
    alpha = check_alpha(alpha)
    ll, log_prior, log_r = exact_mcqa_terms(proposals, reader, retriever, instance, space)
    return renyi_reduce(log_r, ll + log_prior - log_r, alpha)
