"""Truncated softmax retrievers over a top-P support and their diagnostics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import InvalidArgument


def logsumexp(x: np.ndarray) -> float:
    """Max-shifted log-sum-exp of a 1-d array (``-inf`` for an all ``-inf`` input)."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgument("logsumexp of an empty array")
    m = float(np.max(x))
    if not np.isfinite(m):
        return m
    return m + float(np.log(np.sum(np.exp(x - m))))


def log_softmax(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x - logsumexp(x)


def build_support(scores: Mapping[int, float] | Sequence[float] | np.ndarray, P: int) -> np.ndarray:
    """Ids of the ``P`` highest scores, ties to the smaller id, in rank order.

    ``scores`` is either an id-to-score mapping or an array indexed by id.
    """
    if int(P) != P or P < 1:
        raise InvalidArgument(f"P must be a positive integer, got {P!r}")
    if isinstance(scores, Mapping):
        ids = np.array(sorted(scores), dtype=np.int64)
        vals = np.array([scores[i] for i in ids], dtype=np.float64)
    else:
        vals = np.asarray(scores, dtype=np.float64)
        ids = np.arange(vals.size, dtype=np.int64)
    if ids.size == 0:
        raise InvalidArgument("cannot build a support over an empty corpus")
    if np.any(np.isnan(vals)):
        raise InvalidArgument("NaN retrieval score")
    order = np.lexsort((ids, -vals))
    return ids[order[: min(int(P), ids.size)]]


@dataclass(frozen=True)
class TruncatedDistribution:
    """``softmax(scores)`` restricted to ``support``."""

    support: np.ndarray
    scores: np.ndarray
    log_probs: np.ndarray

    def __len__(self) -> int:
        return int(self.support.size)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    def same_support(self, other: "TruncatedDistribution") -> bool:
        return self.support.shape == other.support.shape and bool(np.all(self.support == other.support))


def softmax_on_support(scores: Sequence[float] | np.ndarray, support: Sequence[int] | np.ndarray | None = None) -> TruncatedDistribution:
    scores = np.array(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size == 0:
        raise InvalidArgument("need a non-empty 1-d score vector")
    if np.any(np.isnan(scores)):
        raise InvalidArgument("NaN score on support")
    if not np.all(np.isfinite(scores)):
        raise InvalidArgument("scores must be finite")
    support = np.arange(scores.size, dtype=np.int64) if support is None else np.array(support, dtype=np.int64)
    if support.shape != scores.shape:
        raise InvalidArgument("support and scores differ in length")
    if np.unique(support).size != support.size:
        raise InvalidArgument("support ids must be unique")
    for arr in (support, scores):
        arr.setflags(write=False)
    lp = log_softmax(scores)
    lp.setflags(write=False)
    return TruncatedDistribution(support, scores, lp)


def log_zeta(f_theta, f_phi):
    """Log density ratio of the un-normalized retriever over the proposal."""
    return np.subtract(f_theta, f_phi)


def kl_divergence(r: TruncatedDistribution, p: TruncatedDistribution) -> float:
    """``KL(r || p)`` on a shared support."""
    if not r.same_support(p):
        raise InvalidArgument("KL requires identical supports")
    pr = r.probs
    mask = pr > 0
    return max(0.0, float(np.sum(pr[mask] * (r.log_probs[mask] - p.log_probs[mask]))))


def effective_sample_size(weights: Sequence[float] | np.ndarray) -> float:
    """Kong's effective sample size ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidArgument("weights must be finite and non-negative")
    top = w.max()
    if top <= 0:
        raise InvalidArgument("at least one weight must be positive")
    w = w / top
    return float(w.sum() ** 2 / np.sum(w * w))
