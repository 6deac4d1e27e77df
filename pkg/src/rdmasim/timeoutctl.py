"""Adaptive step-deadline control.

Each collective group keeps an independent timeout profile. After a step the
observed duration (extrapolated linearly when delivery was partial) feeds an
exponentially weighted average that is clamped to a fixed range; group
members then adopt the median of everyone's local estimate so one straggler
cannot dictate the next deadline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

if TYPE_CHECKING:  # pragma: no cover
    from .collective import StepResult


@dataclass
class TimeoutProfile:
    group_id: str
    current_timeout_ns: int
    ewma_beta: float = 0.2
    clamp_min_ns: int = 1
    clamp_max_ns: int = 10 ** 12
    history: list = field(default_factory=list)
    history_limit: int = 64

    def __post_init__(self):
        if not (0.0 < self.ewma_beta <= 1.0):
            raise ValueError("ewma_beta must lie in (0, 1]")
        if not (0 < self.clamp_min_ns <= self.clamp_max_ns):
            raise ValueError("require 0 < clamp_min <= clamp_max")
        self.current_timeout_ns = self._clamp(self.current_timeout_ns)

    def _clamp(self, value: int) -> int:
        return min(self.clamp_max_ns, max(self.clamp_min_ns, value))


def raw_estimate(profile: TimeoutProfile, result: "StepResult") -> int:
    """Duration needed for full delivery: the observation itself when the
    step completed, a linear extrapolation when it was partial, and the
    clamp ceiling when nothing at all arrived."""
    if result.bytes_received <= 0:
        return profile.clamp_max_ns
    if result.bytes_received >= result.bytes_expected:
        return result.duration_ns
    return int(round(result.duration_ns * result.bytes_expected / result.bytes_received))


def update_timeout(profile: TimeoutProfile, result: "StepResult") -> int:
    """EWMA-smooth the new estimate into the profile; returns the new timeout."""
    if result.bytes_expected <= 0:
        raise ValueError("update_timeout requires bytes_expected > 0")
    e = raw_estimate(profile, result)
    beta = profile.ewma_beta
    blended = int(round((1.0 - beta) * profile.current_timeout_ns + beta * e))
    profile.current_timeout_ns = profile._clamp(blended)
    frac = result.bytes_received / result.bytes_expected
    profile.history.append((result.duration_ns, frac))
    if len(profile.history) > profile.history_limit:
        del profile.history[: len(profile.history) - profile.history_limit]
    return profile.current_timeout_ns


def coordinate(local_timeouts: Sequence[int]) -> int:
    """Cluster-wide timeout: the lower median of the reported values."""
    if not local_timeouts:
        raise ValueError("coordinate requires at least one local timeout")
    ordered = sorted(local_timeouts)
    return ordered[(len(ordered) - 1) // 2]


def static_timeout_from_baseline(step_durations_ns: Sequence[int]) -> int:
    """Deadline from a recorded distribution: median plus one population
    standard deviation."""
    n = len(step_durations_ns)
    if n < 2:
        raise ValueError("need at least 2 baseline samples")
    med = coordinate(step_durations_ns)
    mean = sum(step_durations_ns) / n
    var = sum((d - mean) ** 2 for d in step_durations_ns) / n
    return int(round(med + math.sqrt(var)))
