"""Priority sampling without replacement.

A priority sample of size ``k`` from probabilities ``p_1..p_N`` draws
``u_i ~ Uniform(0, 1]``, ranks items by the key ``p_i / u_i``, keeps the ``k``
largest keys and sets the threshold ``tau`` to the ``(k+1)``-th largest key.
With raw weights ``max(p_i, tau)`` the weighted sum over the kept items is an
unbiased estimate of ``sum_i p_i f_i``; dividing the raw weights by their total
gives the self-normalized (biased, consistent) variant.

Ties between keys (probability zero for continuous uniforms) go to the smaller
item id, which keeps every draw a pure function of ``(distribution, k, seed)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import rng as _rng
from ._backend import kernels
from .errors import InvalidArgument


@dataclass(frozen=True)
class DiscreteDistribution:
    """Probabilities over integer item ids (ids strictly increasing)."""

    item_ids: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.item_ids, dtype=np.int64)
        probs = np.asarray(self.probs, dtype=np.float64)
        if ids.ndim != 1 or ids.shape != probs.shape:
            raise InvalidArgument("item_ids and probs must be 1-d and of equal length")
        if ids.size == 0:
            raise InvalidArgument("empty distribution")
        if np.any(np.diff(ids) <= 0):
            raise InvalidArgument("item_ids must be unique and sorted ascending")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise InvalidArgument("probabilities must be finite and non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidArgument(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "item_ids", ids)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_logits(cls, item_ids, logits) -> "DiscreteDistribution":
        logits = np.asarray(logits, dtype=np.float64)
        z = logits - logits.max()
        p = np.exp(z)
        p /= p.sum()
        # absorb rounding so the sum-to-one invariant holds at 1e-12
        p[np.argmax(p)] += 1.0 - p.sum()
        return cls(item_ids, p)

    def __len__(self) -> int:
        return int(self.item_ids.size)

    def prob_of(self, item_id: int) -> float:
        pos = np.searchsorted(self.item_ids, item_id)
        if pos == self.item_ids.size or self.item_ids[pos] != item_id:
            return 0.0
        return float(self.probs[pos])


@dataclass(frozen=True)
class PrioritySample:
    """Items selected by priority sampling, ordered by item id."""

    indices: np.ndarray
    raw_weights: np.ndarray
    norm_weights: np.ndarray
    threshold: float
    k: int
    support_size: int

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def exhaustive(self) -> bool:
        return self.indices.size == self.support_size

    @property
    def log_norm_weights(self) -> np.ndarray:
        return np.log(self.norm_weights)

    def weight_of(self, item_id: int) -> float:
        hit = np.flatnonzero(self.indices == item_id)
        return float(self.norm_weights[hit[0]]) if hit.size else 0.0


def _validate_k(k: int) -> int:
    if int(k) != k or k < 1:
        raise InvalidArgument(f"k must be a positive integer, got {k!r}")
    return int(k)


def priority_sample_from_uniforms(
    dist: DiscreteDistribution, k: int, uniforms: np.ndarray
) -> PrioritySample:
    """Priority sample with explicitly supplied uniforms (one per item of ``dist``)."""
    k = _validate_k(k)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    if uniforms.shape != dist.probs.shape:
        raise InvalidArgument("need exactly one uniform per item")
    if np.any((uniforms <= 0) | (uniforms > 1)):
        raise InvalidArgument("uniforms must lie in (0, 1]")

    positive = dist.probs > 0
    ids = dist.item_ids[positive]
    probs = dist.probs[positive]
    n = ids.size
    if k >= n:
        return PrioritySample(ids.copy(), probs.copy(), probs.copy(), 0.0, k, n)

    keys = probs / uniforms[positive]
    pos, tau = kernels.priority_select(keys, k)
    raw = np.maximum(probs[pos], tau)
    return PrioritySample(ids[pos], raw, raw / raw.sum(), float(tau), k, n)


def priority_sample(dist: DiscreteDistribution, k: int, seed: _rng.Seed) -> PrioritySample:
    """Draw ``min(k, N)`` items without replacement from ``dist``.

    Zero-probability items are dropped from the support first. When ``k`` covers
    the support the full support is returned with ``tau = 0`` and the source
    probabilities as both raw and normalized weights.
    """
    k = _validate_k(k)
    u = _rng.uniform_open_closed(_rng.generator(seed), len(dist))
    return priority_sample_from_uniforms(dist, k, u)


def estimate_weighted_sum(
    sample: PrioritySample, values: Mapping[int, float] | Sequence[float] | np.ndarray, normalized: bool
) -> float:
    """``sum_i w_i f_i`` over the sample with raw (unbiased) or normalized weights.

    ``values`` may be a mapping from item id to value, or an array aligned with
    ``sample.indices``.
    """
    if isinstance(values, Mapping):
        try:
            f = np.array([values[int(i)] for i in sample.indices], dtype=np.float64)
        except KeyError as exc:
            raise InvalidArgument(f"no value for selected item {exc.args[0]}") from None
    else:
        f = np.asarray(values, dtype=np.float64)
        if f.shape != sample.indices.shape:
            raise InvalidArgument("values must align with the sampled indices")
    w = sample.norm_weights if normalized else sample.raw_weights
    return float(w @ f)


@dataclass(frozen=True)
class ProductSample:
    """Independent priority samples, one per component of a product distribution."""

    per_option_samples: tuple[PrioritySample, ...]

    @property
    def n_options(self) -> int:
        return len(self.per_option_samples)

    @property
    def n_combinations(self) -> int:
        return int(np.prod([len(s) for s in self.per_option_samples]))

    def weight(self, combination: Sequence[int]) -> float:
        """``s(D) = prod_j s_j[d_j]`` for a tuple of item ids."""
        if len(combination) != self.n_options:
            raise InvalidArgument("combination length must equal the number of options")
        return float(np.prod([s.weight_of(d) for s, d in zip(self.per_option_samples, combination)]))

    def combinations(self) -> Iterator[tuple[tuple[int, ...], float]]:
        """Yield every ``(item ids, s(D))`` pair; the last option varies fastest."""
        per = [list(zip(s.indices.tolist(), s.norm_weights.tolist())) for s in self.per_option_samples]
        for combo in itertools.product(*per):
            ids = tuple(d for d, _ in combo)
            yield ids, float(np.prod([w for _, w in combo]))


def product_priority_sample(
    dists: Sequence[DiscreteDistribution], k: int, seed: _rng.Seed
) -> ProductSample:
    """One priority sample per distribution, each on its own sub-stream of ``seed``."""
    if len(dists) < 1:
        raise InvalidArgument("need at least one component distribution")
    if len(dists) == 1:
        return ProductSample((priority_sample(dists[0], k, seed),))
    return ProductSample(
        tuple(priority_sample(d, k, _rng.child(seed, j)) for j, d in enumerate(dists))
    )


def priority_estimates(
    probs: np.ndarray, values: np.ndarray, k: int, replicates: int, seed: _rng.Seed, normalized: bool
) -> np.ndarray:
    """``replicates`` independent priority estimates of ``sum(probs * values)``."""
    k = _validate_k(k)
    probs = np.asarray(probs, dtype=np.float64)
    u = _rng.uniform_open_closed(_rng.generator(seed), (replicates, probs.size))
    return kernels.priority_estimate_batch(probs, np.asarray(values, dtype=np.float64), u, k, normalized)


def monte_carlo_estimates(
    probs: np.ndarray, values: np.ndarray, k: int, replicates: int, seed: _rng.Seed
) -> np.ndarray:
    """With-replacement Monte-Carlo estimates: the mean of ``values`` over ``k`` draws from ``probs``."""
    k = _validate_k(k)
    g = _rng.generator(seed)
    probs = np.asarray(probs, dtype=np.float64)
    draws = g.choice(probs.size, size=(replicates, k), p=probs / probs.sum())
    return np.asarray(values, dtype=np.float64)[draws].mean(axis=1)
