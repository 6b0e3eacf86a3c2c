"""Schedules for the Renyi parameter alpha."""

from __future__ import annotations

from ..errors import InvalidArgument

LINEAR_ANNEAL = "linear"
CONSTANT = "constant"


def alpha_schedule(step: int, T: int, kind: str = LINEAR_ANNEAL, value: float = 0.0) -> float:
    """Alpha at a global step.

    ``linear`` decays from 1 to 0 over the first ``T`` steps (the first round)
    and stays at 0 afterwards. ``constant`` always returns ``value``.
    """
    if step < 0:
        raise InvalidArgument(f"step must be non-negative, got {step}")
    if kind == LINEAR_ANNEAL:
        if T <= 0:
            return 0.0
        return max(0.0, 1.0 - step / T)
    if kind == CONSTANT:
        if not 0.0 <= value <= 1.0:
            raise InvalidArgument(f"constant alpha must lie in [0, 1], got {value}")
        return float(value)
    raise InvalidArgument(f"unknown alpha schedule {kind!r}")
