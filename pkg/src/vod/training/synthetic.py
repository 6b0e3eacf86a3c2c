"""Planted-evidence multiple-choice task.

Every fact is a set of attribute tokens paired with an answer token, and each
fact is written into exactly one corpus document (its evidence). A question
lists the attributes of one fact; its options are the fact's answer plus
answers taken from near-miss documents that share all but one attribute with
the fact. Only the evidence document contains every question attribute
together with the correct answer, so the retrieved document decides the
question and retrieval recall is measurable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import rng as _rng
from ..errors import InvalidArgument
from ..mcqa import McqaInstance
from ..scoring import Corpus


@dataclass(frozen=True)
class SyntheticConfig:
    n_docs: int = 500
    n_train: int = 1000
    n_eval: int = 200
    n_options: int = 4
    n_attributes: int = 24
    attributes_per_fact: int = 3
    n_answers: int = 60
    n_filler: int = 30
    filler_per_doc: int = 3
    filler_per_question: int = 2
    evidence_fraction: float = 0.5
    seed: int = 0


@dataclass
class SyntheticTask:
    corpus: Corpus
    train: list[McqaInstance]
    eval: list[McqaInstance]
    config: SyntheticConfig
    evidence_of_fact: dict[int, int] = field(default_factory=dict)


def _tok(prefix: str, i: int) -> str:
    return f"{prefix}{i:03d}"


def generate_task(cfg: SyntheticConfig = SyntheticConfig()) -> SyntheticTask:
    g = _rng.generator(_rng.child(cfg.seed, 101))
    n_facts = int(round(cfg.n_docs * cfg.evidence_fraction))
    n_near = cfg.n_docs - n_facts
    if n_facts < 1 or n_near < 1:
        raise InvalidArgument("need both evidence and near-miss documents")
    if cfg.n_answers < cfg.n_options:
        raise InvalidArgument("answer pool smaller than the number of options")

    # facts: distinct attribute sets with one answer each
    seen, facts = set(), []
    while len(facts) < n_facts:
        attrs = tuple(sorted(g.choice(cfg.n_attributes, cfg.attributes_per_fact, replace=False).tolist()))
        if attrs not in seen:
            seen.add(attrs)
            facts.append((attrs, int(g.integers(cfg.n_answers))))

    # near misses: drop one attribute of a fact, swap in another, change the answer
    near = []
    for i in range(n_near):
        f = i % n_facts
        attrs, answer = facts[f]
        drop = attrs[int(g.integers(len(attrs)))]
        keep = tuple(a for a in attrs if a != drop)
        # the swapped-in attribute must not recreate another fact's attribute set
        others = [a for a in range(cfg.n_attributes)
                  if a not in attrs and tuple(sorted(keep + (a,))) not in seen]
        other = int(g.choice(others))
        wrong = int(g.choice([a for a in range(cfg.n_answers) if a != answer]))
        near.append((f, tuple(keep) + (other,), wrong))

    docs: list[list[str]] = [[_tok("attr", a) for a in attrs] + [_tok("ans", answer)] for attrs, answer in facts]
    docs += [[_tok("attr", a) for a in attrs] + [_tok("ans", wrong)] for _, attrs, wrong in near]
    for d in docs:
        d.extend(_tok("w", int(x)) for x in g.integers(cfg.n_filler, size=cfg.filler_per_doc))
        g.shuffle(d)

    order = g.permutation(len(docs))
    corpus = Corpus.from_tokens([docs[i] for i in order])
    position = {int(old): new for new, old in enumerate(order)}
    evidence_of_fact = {f: position[f] for f in range(n_facts)}
    near_by_fact: dict[int, list[int]] = {}
    for i, (f, _, _) in enumerate(near):
        near_by_fact.setdefault(f, []).append(i)

    def make_question(qid: str) -> McqaInstance:
        f = int(g.integers(n_facts))
        attrs, answer = facts[f]
        q = [_tok("attr", a) for a in attrs]
        q += [_tok("w", int(x)) for x in g.integers(cfg.n_filler, size=cfg.filler_per_question)]
        wrong = [near[i][2] for i in near_by_fact.get(f, [])]
        wrong = list(dict.fromkeys(w for w in wrong if w != answer))
        while len(wrong) < cfg.n_options - 1:
            w = int(g.integers(cfg.n_answers))
            if w != answer and w not in wrong:
                wrong.append(w)
        wrong = wrong[: cfg.n_options - 1]
        g.shuffle(q)
        star = int(g.integers(cfg.n_options))
        opts = [_tok("ans", w) for w in wrong]
        opts.insert(star, _tok("ans", answer))
        return McqaInstance(tuple(q), tuple((o,) for o in opts), star, qid, evidence_of_fact[f])

    train = [make_question(f"train{i:05d}") for i in range(cfg.n_train)]
    evals = [make_question(f"eval{i:05d}") for i in range(cfg.n_eval)]
    return SyntheticTask(corpus, train, evals, cfg, evidence_of_fact)
