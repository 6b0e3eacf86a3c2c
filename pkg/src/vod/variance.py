"""Variance of weighted-sum estimators: with-replacement Monte Carlo against priority sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng
from .errors import InvalidArgument
from .sampling import monte_carlo_estimates, priority_estimates

SETTINGS = ("g=f", "independent-g")


@dataclass(frozen=True)
class VarianceRow:
    setting: str
    k: int
    mc: float
    priority: float
    self_normalized: float


def _variance(x: np.ndarray) -> float:
    # shifting by one sample keeps a constant column at exactly zero
    return float(np.var(x - x[0]))


def _problem(n: int, sigma: float, setting: str, seed: _rng.Seed):
    g = _rng.generator(seed)
    f = g.normal(0.0, sigma, n)
    p = np.exp(f - f.max())
    p /= p.sum()
    values = f if setting == "g=f" else g.normal(0.0, sigma, n)
    return p, values


def variance_table(
    n: int = 100,
    k_grid: Sequence[int] = tuple(range(5, 100, 5)),
    replicates: int = 10_000,
    seed: _rng.Seed = 0,
    sigma: float = 3.0,
    settings: Sequence[str] = SETTINGS,
) -> list[VarianceRow]:
    """Empirical estimator variances of ``sum_i p_i g_i`` with ``p = softmax(f)``, ``f ~ N(0, sigma^2)``."""
    if n < 1 or replicates < 2:
        raise InvalidArgument("need n >= 1 and at least two replicates")
    rows = []
    for s_idx, setting in enumerate(settings):
        if setting not in SETTINGS:
            raise InvalidArgument(f"unknown setting {setting!r}")
        p, values = _problem(n, sigma, setting, _rng.child(seed, s_idx))
        for k in k_grid:
            if k < 1:
                raise InvalidArgument("K must be positive")
            sub = _rng.child(seed, s_idx, int(k))
            mc = monte_carlo_estimates(p, values, k, replicates, _rng.child(sub, 0))
            pr = priority_estimates(p, values, k, replicates, _rng.child(sub, 1), normalized=False)
            sn = priority_estimates(p, values, k, replicates, _rng.child(sub, 1), normalized=True)
            rows.append(VarianceRow(setting, int(k), _variance(mc), _variance(pr), _variance(sn)))
    return rows


def rows_to_csv(rows: Sequence[VarianceRow]) -> str:
    out = ["setting,K,mc_var,priority_var,self_normalized_var"]
    out += [f"{r.setting},{r.k},{r.mc!r},{r.priority!r},{r.self_normalized!r}" for r in rows]
    return "\n".join(out) + "\n"
