"""Pure numpy implementations of the hot kernels.

These mirror ``vod/_kernels.pyx`` function for function and are used when the
compiled extension is unavailable (or when ``VOD_PURE_PYTHON=1``).
"""

from __future__ import annotations

import numpy as np

NAME = "python"
ALPHA_ONE_TOL = 1e-6


def priority_select(keys: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    """Positions of the ``k`` largest keys (ascending) and the threshold.

    Ties are broken by the smaller position. The threshold is the
    ``(k+1)``-th largest key, or 0 when ``k >= len(keys)``.
    """
    keys = np.asarray(keys, dtype=np.float64)
    n = keys.shape[0]
    if k >= n:
        return np.arange(n, dtype=np.int64), 0.0
    order = np.lexsort((np.arange(n), -keys))
    return np.sort(order[:k]).astype(np.int64), float(keys[order[k]])


def priority_estimate_batch(
    probs: np.ndarray,
    values: np.ndarray,
    uniforms: np.ndarray,
    k: int,
    normalized: bool,
) -> np.ndarray:
    """Priority-sampling estimates of ``sum(probs * values)``, one per row of ``uniforms``."""
    probs = np.asarray(probs, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    uniforms = np.asarray(uniforms, dtype=np.float64)
    n = probs.shape[0]
    reps = uniforms.shape[0]
    if k >= n:
        return np.full(reps, float(probs @ values))
    keys = probs[None, :] / uniforms
    tau = np.partition(keys, n - k - 1, axis=1)[:, n - k - 1]
    selected = keys > tau[:, None]
    raw = np.where(selected, np.maximum(probs[None, :], tau[:, None]), 0.0)
    total = raw @ values
    if normalized:
        total = total / raw.sum(axis=1)
    return total


def _logsumexp(x: np.ndarray, axis=None) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return out.reshape(())
    return np.squeeze(out, axis=axis)


def check_product_inputs(log_s, log_zeta, logits, counts, star: int = 0) -> None:
    """Raise ``ValueError`` unless the product-kernel inputs agree in shape."""
    shape = np.shape(log_s)
    if len(shape) != 2 or np.shape(log_zeta) != shape or np.shape(logits) != shape:
        raise ValueError(
            f"log_s, log_zeta and logits must share one (M, Kmax) shape, got "
            f"{np.shape(log_s)}, {np.shape(log_zeta)}, {np.shape(logits)}"
        )
    m_opts, kmax = shape
    counts = np.asarray(counts)
    if counts.shape != (m_opts,):
        raise ValueError(f"counts must have length {m_opts}, got shape {counts.shape}")
    if m_opts and (counts.min() < 1 or counts.max() > kmax):
        raise ValueError(f"counts must lie in [1, {kmax}]")
    if not 0 <= star < max(m_opts, 1):
        raise ValueError(f"answer index {star} out of range for {m_opts} options")


def product_enumerate(
    log_s: np.ndarray,
    log_zeta: np.ndarray,
    logits: np.ndarray,
    counts: np.ndarray,
    star: int,
    alpha: float,
):
    """Enumerate every document combination of a product priority sample.

    Arrays are ``(M, Kmax)``; option ``j`` uses its first ``counts[j]``
    entries. Combinations are ordered like :func:`itertools.product` (last
    option varies fastest).

    Returns ``(value, ess, weights, marginal, reader_coef)``:

    * ``value``: the self-normalized Renyi estimate for answer ``star``;
    * ``ess``: Kong's effective sample size of ``s(D) * v(D)``;
    * ``weights``: normalized gradient weights per combination (flat);
    * ``marginal[j, k]``: total weight of combinations choosing ``k`` for ``j``;
    * ``reader_coef[j, k]``: the same, each combination weighted by the
      option-softmax probability of option ``j``.
    """
    check_product_inputs(log_s, log_zeta, logits, counts, star)
    m_opts = int(log_s.shape[0])
    counts = [int(c) for c in counts]
    shape = tuple(counts)

    def spread(row: np.ndarray, j: int) -> np.ndarray:
        view = [1] * m_opts
        view[j] = counts[j]
        return row[: counts[j]].reshape(view)

    ls = sum(spread(log_s[j], j) for j in range(m_opts))
    lz = sum(spread(log_zeta[j], j) for j in range(m_opts))
    g = np.stack([np.broadcast_to(spread(logits[j], j), shape) for j in range(m_opts)])
    lse_g = _logsumexp(g, axis=0)
    log_reader = g[star] - lse_g
    denom = sum(float(_logsumexp(log_s[j, : counts[j]] + log_zeta[j, : counts[j]])) for j in range(m_opts))
    log_v = log_reader + lz - denom

    one_minus = 1.0 - alpha
    if abs(one_minus) < ALPHA_ONE_TOL:
        s = np.exp(ls)
        value = float(np.sum(s * log_v))
        w_logit = ls
    else:
        value = float(_logsumexp(ls + one_minus * log_v)) / one_minus
        w_logit = ls + one_minus * (log_reader + lz)
    weights = np.exp(w_logit - _logsumexp(w_logit))

    ew = np.exp(ls + log_v - np.max(ls + log_v))
    ess = float(ew.sum() ** 2 / np.sum(ew * ew))

    kmax = log_s.shape[1]
    marginal = np.zeros((m_opts, kmax))
    reader_coef = np.zeros((m_opts, kmax))
    for j in range(m_opts):
        axes = tuple(a for a in range(m_opts) if a != j)
        marginal[j, : counts[j]] = weights.sum(axis=axes)
        pi_j = np.exp(g[j] - lse_g)
        reader_coef[j, : counts[j]] = (weights * pi_j).sum(axis=axes)
    return value, ess, weights.reshape(-1), marginal, reader_coef


def product_values(
    log_s: np.ndarray,
    log_zeta: np.ndarray,
    logits: np.ndarray,
    counts: np.ndarray,
    alpha: float,
) -> np.ndarray:
    """The Renyi estimate of :func:`product_enumerate` for every answer index at once."""
    check_product_inputs(log_s, log_zeta, logits, counts)
    m_opts = int(log_s.shape[0])
    counts = [int(c) for c in counts]
    shape = tuple(counts)

    def spread(row: np.ndarray, j: int) -> np.ndarray:
        view = [1] * m_opts
        view[j] = counts[j]
        return row[: counts[j]].reshape(view)

    ls = sum(spread(log_s[j], j) for j in range(m_opts))
    lz = sum(spread(log_zeta[j], j) for j in range(m_opts))
    g = np.stack([np.broadcast_to(spread(logits[j], j), shape) for j in range(m_opts)])
    denom = sum(float(_logsumexp(log_s[j, : counts[j]] + log_zeta[j, : counts[j]])) for j in range(m_opts))
    log_v = g - _logsumexp(g, axis=0) + lz - denom
    flat = log_v.reshape(m_opts, -1)
    ls = np.broadcast_to(ls, shape).reshape(-1)
    one_minus = 1.0 - alpha
    if abs(one_minus) < ALPHA_ONE_TOL:
        return flat @ np.exp(ls)
    return _logsumexp(ls[None, :] + one_minus * flat, axis=1) / one_minus
