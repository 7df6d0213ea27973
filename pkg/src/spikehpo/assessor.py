"""Median-stop early termination of underperforming trials.

A trial is judged against the population of trials that already finished
naturally: at step ``s`` (once past ``start_step`` and once at least three
finished trials reach that depth), the running averages of the finished
trials' first ``s`` intermediate values are collected and their median
taken. A maximized trial stops when its best intermediate so far is
strictly below that median; a minimized trial when its worst-case symmetric
condition holds.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

__all__ = ["AssessVerdict", "MedianStopAssessor"]

logger = logging.getLogger(__name__)

MIN_COMPLETED_FOR_STOP = 3


class AssessVerdict(Enum):
    CONTINUE = "continue"
    STOP = "stop"


def lower_median(values: list[float]) -> float:
    """Median taking the lower element for even counts.

    Picking an actual element (rather than a midpoint) keeps verdicts
    invariant under strictly monotone transforms of all values.
    """
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


@dataclass
class MedianStopAssessor:
    """Append-only intermediate-metric streams plus the stop rule."""

    start_step: int = 10
    optimize_mode: str = "maximize"
    streams: dict[str, list[float]] = field(default_factory=dict)
    completed: set[str] = field(default_factory=set)

    def __post_init__(self) -> None:
        if self.optimize_mode not in ("maximize", "minimize"):
            raise ValueError(f"optimize_mode must be maximize or minimize, got {self.optimize_mode!r}")

    def record(self, trial_id: str, step: int, value: float) -> None:
        """Append one intermediate value; steps must arrive dense and in order."""
        stream = self.streams.setdefault(trial_id, [])
        if step != len(stream) + 1:
            logger.warning(
                "trial %s: out-of-order intermediate step %d (stream length %d), dropped",
                trial_id,
                step,
                len(stream),
            )
            return
        stream.append(float(value))

    def complete(self, trial_id: str) -> None:
        """Mark a trial's stream final; only naturally finished trials join the pool."""
        if trial_id not in self.streams:
            self.streams[trial_id] = []
        self.completed.add(trial_id)

    def assess(self, trial_id: str, step: int) -> AssessVerdict:
        """Verdict for a trial at a given step; pure given current state."""
        if trial_id not in self.streams:
            raise KeyError(f"unknown trial id: {trial_id!r}")
        stream = self.streams[trial_id]
        if len(stream) < step:
            raise ValueError(f"trial {trial_id!r} has only {len(stream)} values, cannot assess step {step}")
        if step < self.start_step:
            return AssessVerdict.CONTINUE

        running_means = [
            sum(self.streams[tid][:step]) / step
            for tid in self.completed
            if len(self.streams[tid]) >= step
        ]
        if len(running_means) < MIN_COMPLETED_FOR_STOP:
            return AssessVerdict.CONTINUE

        threshold = lower_median(running_means)
        seen = stream[:step]
        if self.optimize_mode == "maximize":
            return AssessVerdict.STOP if max(seen) < threshold else AssessVerdict.CONTINUE
        return AssessVerdict.STOP if min(seen) > threshold else AssessVerdict.CONTINUE
