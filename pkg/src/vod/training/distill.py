"""Distilling the answer-aware proposal into a query-only retriever."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import InvalidArgument
from ..mcqa import McqaInstance
from ..retrieval import TruncatedDistribution, kl_divergence, softmax_on_support
from ..scoring import LINEAR, FeatureSpace, ScoreModel, score_and_grad_batch, score_docs
from .loop import TrainConfig, reindex
from .optimizer import AdamHyper, AdamState, optimizer_step


def distillation_loss_and_grad(
    teacher: TruncatedDistribution,
    student: ScoreModel,
    query: Sequence[str],
    space: FeatureSpace,
    support: Sequence[int] | np.ndarray | None = None,
    features: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """``KL(teacher || student)`` on the teacher's support and its gradient in the student parameters.

    ``features`` may hold precomputed linear feature rows aligned with the support.
    """
    if support is not None and not np.array_equal(np.asarray(support), teacher.support):
        raise InvalidArgument("student support differs from the teacher support")
    ids = teacher.support
    if features is not None and student.kind == LINEAR:
        grads = features * student.scale
        scores = grads @ student.params
    else:
        scores, grads = score_and_grad_batch(student, query, ids, space)
    student_dist = softmax_on_support(scores, ids)
    loss = kl_divergence(teacher, student_dist)
    return loss, (student_dist.probs - teacher.probs) @ grads


@dataclass(frozen=True)
class DistillTarget:
    query: tuple[str, ...]
    teacher: TruncatedDistribution
    features: np.ndarray | None


def build_targets(
    instances: Sequence[McqaInstance],
    checkpoint: ScoreModel | None,
    config: TrainConfig,
    space: FeatureSpace,
) -> list[DistillTarget]:
    """Teachers are the cached proposals of the correct-answer queries; students see the question only."""
    correct = [
        McqaInstance(inst.question, (inst.options[inst.correct_index],), 0, inst.qid, inst.evidence_doc)
        for inst in instances
    ]
    cache = reindex(space, correct, checkpoint, config, with_features=False)
    targets = []
    for inst in correct:
        teacher = cache.get(inst.option_queries[0]).proposal
        feats = space.linear_features(inst.question, teacher.support)
        targets.append(DistillTarget(inst.question, teacher, feats))
    return targets


@dataclass
class DistillResult:
    student: ScoreModel
    kl_trace: list[float] = field(default_factory=list)


def mean_distillation_loss(targets: Sequence[DistillTarget], student: ScoreModel, space: FeatureSpace):
    loss, grad = 0.0, np.zeros(student.params.size)
    for t in targets:
        l, g = distillation_loss_and_grad(t.teacher, student, t.query, space, features=t.features)
        loss += l
        grad += g
    return loss / len(targets), grad / len(targets)


def run_distillation(
    targets: Sequence[DistillTarget],
    student: ScoreModel,
    space: FeatureSpace,
    steps: int,
    hyper: AdamHyper = AdamHyper(),
) -> DistillResult:
    """Full-batch optimizer steps on the mean KL; ``kl_trace[t]`` is the loss before step ``t``."""
    if not targets:
        raise InvalidArgument("no distillation targets")
    student = student.copy()
    state = AdamState.zeros(student.params.size)
    trace = []
    for _ in range(steps):
        loss, grad = mean_distillation_loss(targets, student, space)
        trace.append(loss)
        student.params, state = optimizer_step(student.params, grad, state, hyper)
    trace.append(mean_distillation_loss(targets, student, space)[0])
    return DistillResult(student, trace)


def recall_at_1(student: ScoreModel, instances: Sequence[McqaInstance], space: FeatureSpace) -> float:
    """Fraction of questions whose top-scored document (over the whole corpus) is the planted evidence."""
    hits = []
    for inst in instances:
        if inst.evidence_doc is None:
            raise InvalidArgument(f"question {inst.qid} has no known evidence document")
        hits.append(int(np.argmax(score_docs(student, inst.question, space))) == inst.evidence_doc)
    return float(np.mean(hits))
