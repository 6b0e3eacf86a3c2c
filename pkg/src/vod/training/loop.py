"""Round-based training with cached proposals, alpha annealing and periodic evaluation."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np

from .. import rng as _rng
from ..errors import InvalidArgument
from ..mcqa import (
    DEFAULT_ENUMERATION_CAP,
    McqaInstance,
    OptionRetrievalState,
    mc_eval,
    mcqa_vod_step,
    predict,
)
from ..retrieval import TruncatedDistribution, build_support, kl_divergence, softmax_on_support
from ..scoring import DUAL, KINDS, LINEAR, FeatureSpace, ScoreModel, beta_correction, hybrid_posterior_score, score_docs
from .optimizer import AdamHyper, AdamState, optimizer_step
from .schedule import CONSTANT, LINEAR_ANNEAL, alpha_schedule

log = logging.getLogger(__name__)

LEARNED = "learned"
FROZEN = "frozen-proposal"

# stream tags for child seeds
_TAG_STEP, _TAG_ORDER, _TAG_EVAL, _TAG_INIT = 1, 2, 3, 4


@dataclass
class TrainConfig:
    rounds: int = 2
    steps_per_round: int = 125
    K: int = 8
    M: int = 4
    P: int = 100
    C_eval: int = 10
    alpha_schedule: str = LINEAR_ANNEAL
    alpha_value: float = 0.0
    eval_alpha: float = 0.0
    tau: float = 5.0
    batch_size: int = 8
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    retriever_mode: str = LEARNED
    reader_kind: str = LINEAR
    retriever_kind: str = LINEAR
    embedding_dim: int = 16
    n_indicators: int = 32
    score_scale: float = 1.0
    enumeration_cap: int = DEFAULT_ENUMERATION_CAP
    seed: int = 0

    def __post_init__(self):
        for name in ("rounds", "K", "M", "P", "C_eval", "batch_size", "embedding_dim"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be at least 1")
        if self.steps_per_round < 0 or self.n_indicators < 0:
            raise InvalidArgument("steps_per_round and n_indicators must be non-negative")
        if self.K > self.P:
            raise InvalidArgument(f"K={self.K} exceeds P={self.P}")
        if self.alpha_schedule not in (LINEAR_ANNEAL, CONSTANT):
            raise InvalidArgument(f"unknown alpha schedule {self.alpha_schedule!r}")
        if self.retriever_mode not in (LEARNED, FROZEN):
            raise InvalidArgument(f"unknown retriever mode {self.retriever_mode!r}")
        for kind in (self.reader_kind, self.retriever_kind):
            if kind not in KINDS:
                raise InvalidArgument(f"unknown score-model kind {kind!r}")
        if not self.tau > 0:
            raise InvalidArgument("tau must be positive")
        for name in ("alpha_value", "eval_alpha"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise InvalidArgument(f"{name} must lie in [0, 1]")

    @property
    def hyper(self) -> AdamHyper:
        return AdamHyper(self.lr, self.beta1, self.beta2, self.eps, self.weight_decay)

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}

    def as_dict(self) -> dict:
        return asdict(self)


# -- proposal cache ----------------------------------------------------------


@dataclass(frozen=True)
class CachedQuery:
    proposal: TruncatedDistribution
    features: np.ndarray | None


@dataclass(frozen=True)
class RoundCache:
    """Frozen proposals for every option query of a round, keyed by query tokens."""

    round_index: int
    entries: dict

    def get(self, query: tuple[str, ...]) -> CachedQuery:
        try:
            return self.entries[query]
        except KeyError:
            raise InvalidArgument(f"query {' '.join(query)!r} is not cached for this round") from None

    def state_factory(self, instance: McqaInstance, k: int):
        cached = [self.get(q) for q in instance.option_queries]
        proposals = [c.proposal for c in cached]
        feats = None if any(c.features is None for c in cached) else [c.features for c in cached]

        def factory(seed):
            return OptionRetrievalState.draw(proposals, k, seed, feats)

        return factory


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


def reindex(
    space: FeatureSpace,
    instances: Sequence[McqaInstance],
    checkpoint: ScoreModel | None,
    config: TrainConfig,
    round_index: int = 1,
    with_features: bool = True,
) -> RoundCache:
    """Score every option query against the corpus and cache its top-P proposal.

    The proposal score is the checkpoint score (zero without a checkpoint) plus
    temperature-scaled BM25 of the question and, length-corrected, of the answer.
    """
    n = space.n_docs
    P = config.P
    if P > n:
        log.info("P=%d exceeds the corpus size %d; using P=%d", P, n, n)
        P = n
    entries: dict = {}
    for inst in instances:
        bm25_q = space.bm25_all(inst.question)
        for opt, query in zip(inst.options, inst.option_queries):
            if query in entries:
                continue
            bm25_a = space.bm25_all(opt) if opt else np.zeros(n)
            beta = beta_correction(len(inst.question), max(len(opt), 1))
            ckpt = score_docs(checkpoint, query, space) if checkpoint is not None else np.zeros(n)
            scores = hybrid_posterior_score(ckpt, bm25_q, bm25_a, config.tau, beta)
            support = build_support(scores, P)
            proposal = softmax_on_support(scores[support], support)
            feats = _frozen(space.linear_features(query, support)) if with_features else None
            entries[query] = CachedQuery(proposal, feats)
    return RoundCache(round_index, entries)


# -- metrics -----------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    step: int
    alpha: float
    objective: float
    ess: float
    kl: float
    train_acc: float


@dataclass
class MetricsTrace:
    steps: list[StepRecord] = field(default_factory=list)
    evals: list[tuple[int, float]] = field(default_factory=list)
    round_starts: list[int] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.steps], dtype=np.float64)

    def to_csv(self) -> str:
        lines = ["step,alpha,objective,ess,kl,train_acc"]
        for r in self.steps:
            lines.append(f"{r.step},{r.alpha:.10g},{r.objective:.10g},{r.ess:.10g},{r.kl:.10g},{r.train_acc:.10g}")
        lines.append("round,eval_acc")
        lines.extend(f"{rnd},{acc:.10g}" for rnd, acc in self.evals)
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())


# -- steps -------------------------------------------------------------------


@dataclass
class Models:
    reader: ScoreModel
    retriever: ScoreModel | None
    reader_opt: AdamState
    retriever_opt: AdamState | None

    def copy(self) -> "Models":
        return Models(
            self.reader.copy(),
            None if self.retriever is None else self.retriever.copy(),
            self.reader_opt.copy(),
            None if self.retriever_opt is None else self.retriever_opt.copy(),
        )


def init_models(space: FeatureSpace, config: TrainConfig) -> Models:
    def make(kind: str, tag: int) -> ScoreModel:
        if kind == DUAL:
            # a zero embedding table is a saddle point, so start from small noise
            return ScoreModel.random(space, kind, _rng.child(config.seed, _TAG_INIT, tag),
                                     dim=config.embedding_dim, scale=config.score_scale)
        return ScoreModel.zeros(space, kind, config.embedding_dim, config.score_scale)

    reader = make(config.reader_kind, 0)
    retriever = make(config.retriever_kind, 1) if config.retriever_mode == LEARNED else None
    return Models(
        reader,
        retriever,
        AdamState.zeros(reader.params.size),
        None if retriever is None else AdamState.zeros(retriever.params.size),
    )


def _support_kl(cache: RoundCache, query, retriever: ScoreModel | None, space: FeatureSpace) -> float:
    entry = cache.get(query)
    if retriever is None:
        return 0.0
    if entry.features is not None and retriever.kind == LINEAR:
        f = entry.features @ (retriever.params * retriever.scale)
    else:
        f = score_docs(retriever, query, space, entry.proposal.support)
    return kl_divergence(entry.proposal, softmax_on_support(f, entry.proposal.support))


def train_step(
    batch: Sequence[McqaInstance],
    cache: RoundCache,
    models: Models,
    alpha: float,
    config: TrainConfig,
    space: FeatureSpace,
    seed: _rng.Seed,
    step: int = 0,
) -> tuple[Models, StepRecord]:
    """One optimizer update on the mean VOD gradient of a batch (ascent on the objective)."""
    if not batch:
        raise InvalidArgument("empty batch")
    d_reader = np.zeros(models.reader.params.size)
    d_retriever = None if models.retriever is None else np.zeros(models.retriever.params.size)
    objective = ess = kl = correct = 0.0
    for i, inst in enumerate(batch):
        state = cache.state_factory(inst, config.K)(_rng.child(seed, i))
        res = mcqa_vod_step(alpha, state, models.reader, models.retriever, inst, space, config.enumeration_cap)
        d_reader += res.gradient.reader_grad
        if d_retriever is not None:
            d_retriever += res.gradient.retriever_grad
        objective += res.report.value
        ess += res.report.ess
        correct += predict(res.answer_values) == inst.correct_index
        kl += np.mean([_support_kl(cache, q, models.retriever, space) for q in inst.option_queries])
    n = len(batch)
    new = models.copy()
    new.reader.params, new.reader_opt = optimizer_step(models.reader.params, -d_reader / n, models.reader_opt, config.hyper)
    if d_retriever is not None:
        new.retriever.params, new.retriever_opt = optimizer_step(
            models.retriever.params, -d_retriever / n, models.retriever_opt, config.hyper
        )
    return new, StepRecord(step, alpha, objective / n, ess / n, kl / n, correct / n)


def evaluate(
    instances: Sequence[McqaInstance],
    models: Models,
    cache: RoundCache,
    config: TrainConfig,
    space: FeatureSpace,
    seed: _rng.Seed,
) -> tuple[float, list[np.ndarray]]:
    """Accuracy of the Monte-Carlo averaged option probabilities."""
    probs = []
    for i, inst in enumerate(instances):
        p = mc_eval(inst, models.reader, models.retriever, space, cache.state_factory(inst, config.K),
                    config.C_eval, config.eval_alpha, _rng.child(seed, i))
        probs.append(p)
    if not instances:
        return float("nan"), probs
    acc = float(np.mean([predict(p) == inst.correct_index for p, inst in zip(probs, instances)]))
    return acc, probs


@dataclass
class TrainResult:
    trace: MetricsTrace
    models: Models
    space: FeatureSpace
    eval_probs: list[np.ndarray]

    @property
    def final_eval_accuracy(self) -> float:
        return self.trace.evals[-1][1]


def _checkpoint(models: Models) -> ScoreModel | None:
    return models.retriever


def run_training(
    config: TrainConfig,
    train: Sequence[McqaInstance],
    eval_set: Sequence[McqaInstance],
    space: FeatureSpace,
    models: Models | None = None,
) -> TrainResult:
    """``rounds`` x ``steps_per_round`` updates, re-indexing at every round start."""
    if not train and config.steps_per_round > 0:
        raise InvalidArgument("empty training set")
    for inst in list(train) + list(eval_set):
        if inst.n_options != config.M:
            raise InvalidArgument(f"question {inst.qid} has {inst.n_options} options, config expects M={config.M}")
    models = init_models(space, config) if models is None else models.copy()
    trace = MetricsTrace()
    eval_seed = _rng.child(config.seed, _TAG_EVAL)

    cache = reindex(space, eval_set, None, config, 1)
    acc, probs = evaluate(eval_set, models, cache, config, space, _rng.child(eval_seed, 0))
    trace.evals.append((0, acc))

    T = config.steps_per_round
    order: list[int] = []
    epoch = 0
    global_step = 0
    for rnd in range(1, config.rounds + 1):
        if T == 0:
            break
        ckpt = _checkpoint(models) if rnd > 1 else None
        cache = reindex(space, train, ckpt, config, rnd)
        trace.round_starts.append(global_step)
        for _ in range(T):
            batch = []
            while len(batch) < config.batch_size:
                if not order:
                    order = _rng.generator(_rng.child(config.seed, _TAG_ORDER, epoch)).permutation(len(train)).tolist()
                    epoch += 1
                batch.append(train[order.pop(0)])
            alpha = alpha_schedule(global_step, T, config.alpha_schedule, config.alpha_value)
            models, record = train_step(batch, cache, models, alpha, config, space,
                                        _rng.child(config.seed, _TAG_STEP, global_step), global_step)
            trace.steps.append(record)
            global_step += 1
        eval_cache = reindex(space, eval_set, _checkpoint(models), config, rnd + 1)
        acc, probs = evaluate(eval_set, models, eval_cache, config, space, _rng.child(eval_seed, rnd))
        trace.evals.append((rnd, acc))
        log.info("round %d: eval accuracy %.4f", rnd, acc)
    return TrainResult(trace, models, space, probs)
