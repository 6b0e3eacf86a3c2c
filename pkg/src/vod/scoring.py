"""Text plumbing, BM25 and parametric score functions.

Two score-model kinds are provided, both with analytic parameter gradients:

``linear-features``
    ``score = scale * theta . phi(q, d)`` where ``phi`` holds the number of
    distinct query terms present in the document, that count divided by the
    number of distinct query terms, BM25(q, d), and one indicator per term of a
    small fixed vocabulary (1 when the term occurs in both query and document).

``dual-embedding``
    ``score = scale * e_q . e_d`` where ``e_x`` is the mean of per-token
    embeddings (rows of the parameter table) over the tokens of ``x``.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from . import rng as _rng
from .errors import InvalidArgument

LINEAR = "linear-features"
DUAL = "dual-embedding"
KINDS = (LINEAR, DUAL)
N_BASE_FEATURES = 3

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class Corpus:
    docs: tuple[tuple[int, tuple[str, ...]], ...]

    def __post_init__(self):
        for expect, (doc_id, tokens) in enumerate(self.docs):
            if doc_id != expect:
                raise InvalidArgument(f"doc ids must be contiguous from 0; found {doc_id} at position {expect}")
            if not tokens:
                raise InvalidArgument(f"document {doc_id} is empty")

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Corpus":
        return cls(tuple((i, tuple(tokenize(t))) for i, t in enumerate(texts)))

    @classmethod
    def from_tokens(cls, token_lists: Iterable[Sequence[str]]) -> "Corpus":
        return cls(tuple((i, tuple(t)) for i, t in enumerate(token_lists)))

    def __len__(self) -> int:
        return len(self.docs)

    def tokens(self, doc_id: int) -> tuple[str, ...]:
        if not 0 <= doc_id < len(self.docs):
            raise InvalidArgument(f"unknown doc id {doc_id}")
        return self.docs[doc_id][1]


@dataclass(frozen=True)
class QueryRecord:
    question: tuple[str, ...]
    answer: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.question:
            raise InvalidArgument("question must be non-empty")

    @property
    def tokens(self) -> tuple[str, ...]:
        """The concatenation ``[q; a]``."""
        return self.question + self.answer


# -- files -------------------------------------------------------------------


def read_corpus(path: str | Path) -> Corpus:
    """Read ``<doc_id>\\t<text>`` lines. Ids must be contiguous from 0 after sorting."""
    rows = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            doc_id, sep, text = line.partition("\t")
            if not sep:
                raise InvalidArgument(f"{path}:{lineno}: expected '<doc_id>\\t<text>'")
            try:
                rows[int(doc_id)] = tuple(tokenize(text))
            except ValueError:
                raise InvalidArgument(f"{path}:{lineno}: doc id {doc_id!r} is not an integer") from None
    return Corpus(tuple((i, rows[i]) if i in rows else (i, ()) for i in range(len(rows))))


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, tokens in corpus.docs:
            fh.write(f"{doc_id}\t{' '.join(tokens)}\n")


@dataclass(frozen=True)
class QueryFileRecord:
    qid: str
    question: tuple[str, ...]
    options: tuple[tuple[str, ...], ...]
    correct_index: int


def read_queries(path: str | Path) -> list[QueryFileRecord]:
    """Read ``<qid>\\t<question>\\t<optA>|<optB>|...\\t<correct_index>`` lines."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise InvalidArgument(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            qid, question, options, correct = parts
            opts = tuple(tuple(tokenize(o)) for o in options.split("|"))
            try:
                star = int(correct)
            except ValueError:
                raise InvalidArgument(f"{path}:{lineno}: correct index {correct!r} is not an integer") from None
            if not 0 <= star < len(opts):
                raise InvalidArgument(f"{path}:{lineno}: correct index {star} out of range")
            out.append(QueryFileRecord(qid, tuple(tokenize(question)), opts, star))
    return out


def write_queries(records: Iterable[QueryFileRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            opts = "|".join(" ".join(o) for o in r.options)
            fh.write(f"{r.qid}\t{' '.join(r.question)}\t{opts}\t{r.correct_index}\n")


# -- BM25 --------------------------------------------------------------------


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: np.ndarray
    avg_doc_len: float
    n_docs: int
    k1: float = 1.2
    b: float = 0.75
    _tf: dict[str, dict[int, int]] = field(default_factory=dict, repr=False)

    def idf(self, term: str) -> float:
        n_t = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - n_t + 0.5) / (n_t + 0.5))


def build_bm25_index(corpus: Corpus, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    if len(corpus) == 0:
        raise InvalidArgument("cannot index an empty corpus")
    postings: dict[str, list[tuple[int, int]]] = {}
    for doc_id, tokens in corpus.docs:
        for term, tf in sorted(Counter(tokens).items()):
            postings.setdefault(term, []).append((doc_id, tf))
    lengths = np.array([len(t) for _, t in corpus.docs], dtype=np.float64)
    tf_lookup = {term: dict(p) for term, p in postings.items()}
    return Bm25Index(postings, lengths, float(lengths.mean()), len(corpus), k1, b, tf_lookup)


def bm25_score(index: Bm25Index, query_tokens: Sequence[str], doc_id: int) -> float:
    """Okapi BM25; each occurrence of a term in the query contributes once."""
    if not 0 <= doc_id < index.n_docs:
        raise InvalidArgument(f"unknown doc id {doc_id}")
    norm = index.k1 * (1.0 - index.b + index.b * index.doc_lengths[doc_id] / index.avg_doc_len)
    total = 0.0
    for term in query_tokens:
        tf = index._tf.get(term, {}).get(doc_id, 0)
        if tf:
            total += index.idf(term) * tf * (index.k1 + 1.0) / (tf + norm)
    return total


def hybrid_posterior_score(ckpt_score: float, bm25_q: float, bm25_a: float, tau: float = 5.0, beta: float = 1.0) -> float:
    """Sampling score: checkpoint score plus temperature-scaled BM25 of question and answer."""
    if not tau > 0:
        raise InvalidArgument(f"tau must be positive, got {tau!r}")
    return ckpt_score + (bm25_q + beta * bm25_a) / tau


def beta_correction(len_q: int, len_a: int) -> float:
    """Answer-BM25 weight ``1 + 0.5 * max(0, ln(len_q / len_a))``."""
    if len_q < 1 or len_a < 1:
        raise InvalidArgument("lengths must be at least 1")
    return 1.0 + 0.5 * max(0.0, math.log(len_q / len_a))


# -- feature space -----------------------------------------------------------


class FeatureSpace:
    """Corpus-bound featurizer shared by all score models over one corpus.

    Holds sparse document-term matrices so that features or scores for one
    query against many documents are a handful of column gathers.
    """

    def __init__(
        self,
        corpus: Corpus,
        index: Bm25Index | None = None,
        indicator_terms: Sequence[str] | None = None,
        n_indicators: int = 32,
    ):
        self.corpus = corpus
        self.index = index if index is not None else build_bm25_index(corpus)
        self.vocab: dict[str, int] = {t: i for i, t in enumerate(sorted(self.index.postings))}
        if indicator_terms is None:
            by_df = sorted(self.index.postings, key=lambda t: (-len(self.index.postings[t]), t))
            indicator_terms = by_df[:n_indicators]
        self.indicator_terms: tuple[str, ...] = tuple(indicator_terms)
        self._indicator_pos = {t: i for i, t in enumerate(self.indicator_terms)}

        n, v = len(corpus), len(self.vocab)
        rows, cols, tfs = [], [], []
        for term, plist in self.index.postings.items():
            col = self.vocab[term]
            for doc_id, tf in plist:
                rows.append(doc_id)
                cols.append(col)
                tfs.append(tf)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        tfs = np.asarray(tfs, dtype=np.float64)
        ix = self.index
        norm = ix.k1 * (1.0 - ix.b + ix.b * ix.doc_lengths[rows] / ix.avg_doc_len)
        df = np.bincount(cols, minlength=v).astype(np.float64)
        idf = np.log(1.0 + (n - df + 0.5) / (df + 0.5))
        bm25_w = idf[cols] * tfs * (ix.k1 + 1.0) / (tfs + norm)
        self.presence = sparse.csc_matrix((np.ones_like(tfs), (rows, cols)), shape=(n, v))
        self.bm25_weights = sparse.csc_matrix((bm25_w, (rows, cols)), shape=(n, v))
        lengths = ix.doc_lengths[rows]
        self.doc_pool = sparse.csr_matrix((tfs / lengths, (rows, cols)), shape=(n, v))

    @property
    def n_docs(self) -> int:
        return len(self.corpus)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def n_linear_features(self) -> int:
        return N_BASE_FEATURES + len(self.indicator_terms)

    def _query_terms(self, query_tokens: Sequence[str]):
        counts = Counter(query_tokens)
        known = [(self.vocab[t], c, t) for t, c in sorted(counts.items()) if t in self.vocab]
        ids = np.array([k[0] for k in known], dtype=np.int64)
        qtf = np.array([k[1] for k in known], dtype=np.float64)
        return ids, qtf, [k[2] for k in known], len(counts)

    def linear_features(self, query_tokens: Sequence[str], doc_ids: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Feature rows ``phi(q, d)`` for each requested document (all by default)."""
        ids, qtf, terms, n_distinct = self._query_terms(query_tokens)
        rows = np.arange(self.n_docs) if doc_ids is None else np.asarray(doc_ids, dtype=np.int64)
        if rows.size and (rows.min() < 0 or rows.max() >= self.n_docs):
            raise InvalidArgument("doc id out of range")
        out = np.zeros((rows.size, self.n_linear_features))
        if ids.size == 0:
            return out
        pres = self.presence[:, ids][rows].toarray()
        shared = pres.sum(axis=1)
        out[:, 0] = shared
        out[:, 1] = shared / max(n_distinct, 1)
        out[:, 2] = (self.bm25_weights[:, ids][rows] @ qtf)
        for col, term in enumerate(terms):
            pos = self._indicator_pos.get(term)
            if pos is not None:
                out[:, N_BASE_FEATURES + pos] = pres[:, col]
        return out

    def bm25_all(self, query_tokens: Sequence[str]) -> np.ndarray:
        """BM25(q, d) for every document."""
        ids, qtf, _, _ = self._query_terms(query_tokens)
        if ids.size == 0:
            return np.zeros(self.n_docs)
        return np.asarray(self.bm25_weights[:, ids] @ qtf).ravel()

    def query_pool(self, query_tokens: Sequence[str]) -> np.ndarray:
        """Mean-pooling weights of the query over the vocabulary (OOV tokens dropped)."""
        ids, qtf, _, _ = self._query_terms(query_tokens)
        pool = np.zeros(self.vocab_size)
        if ids.size:
            pool[ids] = qtf / qtf.sum()
        return pool


# -- score models ------------------------------------------------------------


@dataclass
class ScoreModel:
    """A parametric score ``f(q, d)`` over a :class:`FeatureSpace`."""

    kind: str
    params: np.ndarray
    dim: int
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown score-model kind {self.kind!r}")
        self.params = np.asarray(self.params, dtype=np.float64).copy()
        if not np.all(np.isfinite(self.params)):
            raise InvalidArgument("parameters must be finite")

    @classmethod
    def zeros(cls, space: FeatureSpace, kind: str = LINEAR, dim: int = 16, scale: float = 1.0) -> "ScoreModel":
        if kind == LINEAR:
            return cls(kind, np.zeros(space.n_linear_features), space.n_linear_features, scale)
        return cls(kind, np.zeros(space.vocab_size * dim), dim, scale)

    @classmethod
    def random(cls, space: FeatureSpace, kind: str, seed: _rng.Seed, dim: int = 16, std: float = 0.1, scale: float = 1.0) -> "ScoreModel":
        model = cls.zeros(space, kind, dim, scale)
        model.params = _rng.generator(seed).normal(0.0, std, model.params.size)
        return model

    def copy(self) -> "ScoreModel":
        return ScoreModel(self.kind, self.params.copy(), self.dim, self.scale)

    def check_space(self, space: FeatureSpace) -> None:
        expected = space.n_linear_features if self.kind == LINEAR else space.vocab_size * self.dim
        if self.params.size != expected:
            raise InvalidArgument(
                f"{self.kind} model has {self.params.size} parameters, feature space expects {expected}"
            )


def _as_tokens(query: QueryRecord | Sequence[str]) -> Sequence[str]:
    return query.tokens if isinstance(query, QueryRecord) else query


def score_and_grad_batch(
    model: ScoreModel, query: QueryRecord | Sequence[str], doc_ids: Sequence[int] | np.ndarray, space: FeatureSpace
) -> tuple[np.ndarray, np.ndarray]:
    """Scores ``(n,)`` and parameter gradients ``(n, n_params)`` for several documents."""
    model.check_space(space)
    tokens = _as_tokens(query)
    doc_ids = np.asarray(doc_ids, dtype=np.int64)
    if model.kind == LINEAR:
        phi = space.linear_features(tokens, doc_ids) * model.scale
        return phi @ model.params, phi
    table = model.params.reshape(space.vocab_size, model.dim)
    a_q = space.query_pool(tokens)
    a_d = space.doc_pool[doc_ids].toarray()
    e_q = a_q @ table
    e_d = a_d @ table
    scores = model.scale * (e_d @ e_q)
    grads = model.scale * (a_q[None, :, None] * e_d[:, None, :] + a_d[:, :, None] * e_q[None, None, :])
    return scores, grads.reshape(doc_ids.size, -1)


def score_and_grad(
    model: ScoreModel, query: QueryRecord | Sequence[str], doc_id: int, space: FeatureSpace
) -> tuple[float, np.ndarray]:
    """Score of one (query, document) pair and its gradient w.r.t. ``model.params``."""
    if not 0 <= doc_id < space.n_docs:
        raise InvalidArgument(f"unknown doc id {doc_id}")
    s, g = score_and_grad_batch(model, query, [doc_id], space)
    return float(s[0]), g[0]


def score_docs(
    model: ScoreModel, query: QueryRecord | Sequence[str], space: FeatureSpace, doc_ids: Sequence[int] | np.ndarray | None = None
) -> np.ndarray:
    """Scores only (no gradients); all documents by default."""
    model.check_space(space)
    tokens = _as_tokens(query)
    if model.kind == LINEAR:
        return space.linear_features(tokens, doc_ids) @ (model.params * model.scale)
    table = model.params.reshape(space.vocab_size, model.dim)
    e_q = space.query_pool(tokens) @ table
    pool = space.doc_pool if doc_ids is None else space.doc_pool[np.asarray(doc_ids, dtype=np.int64)]
    return model.scale * np.asarray(pool @ (table @ e_q)).ravel()
