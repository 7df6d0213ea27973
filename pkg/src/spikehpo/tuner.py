"""Annealing proposal strategy for hyperparameter assignments.

Proposals start as pure prior draws and then concentrate around the best
observed trial: quantized-uniform parameters are perturbed with a Gaussian
whose width shrinks with a per-proposal temperature schedule, categorical
parameters are resampled with probability equal to the temperature. A
reseed policy periodically replaces the random stream and restores the
initial temperature, so long experiments keep re-widening their search.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .searchspace import ParamKind, SearchSpace, Scalar, quantize, sample_assignment

__all__ = ["AnnealingTuner", "ReseedPolicy", "TunerState"]

logger = logging.getLogger(__name__)

DEFAULT_T0 = 1.0
DEFAULT_DECAY = 0.95
DEFAULT_WARMUP = 20


@dataclass
class ReseedPolicy:
    """Reseed fires exactly when sequence_id > 0 and sequence_id % n_tr == 0."""

    n_tr: int

    def __post_init__(self) -> None:
        if self.n_tr <= 0:
            raise ValueError(f"n_tr must be positive, got {self.n_tr}")

    def fires(self, sequence_id: int) -> bool:
        return sequence_id > 0 and sequence_id % self.n_tr == 0


@dataclass
class TunerState:
    """Mutable tuner bookkeeping; owned by a single coordinator."""

    optimize_mode: str = "maximize"
    seed: int = 0
    t0: float = DEFAULT_T0
    decay: float = DEFAULT_DECAY
    warmup: int = DEFAULT_WARMUP
    history: list[tuple[dict[str, Scalar], float]] = field(default_factory=list)
    proposals_made: int = 0
    anneal_steps: int = 0
    rng: np.random.Generator = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.optimize_mode not in ("maximize", "minimize"):
            raise ValueError(f"optimize_mode must be maximize or minimize, got {self.optimize_mode!r}")
        if not (0.0 < self.t0 <= 1.0):
            raise ValueError(f"t0 must lie in (0, 1], got {self.t0}")
        if not (0.0 < self.decay < 1.0):
            raise ValueError(f"decay must lie in (0, 1), got {self.decay}")
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    @property
    def temperature(self) -> float:
        return self.t0 * self.decay**self.anneal_steps


class AnnealingTuner:
    """Propose assignments by sampling around the best observed trial."""

    def __init__(
        self,
        optimize_mode: str = "maximize",
        seed: int = 0,
        t0: float = DEFAULT_T0,
        decay: float = DEFAULT_DECAY,
        warmup: int = DEFAULT_WARMUP,
    ) -> None:
        self.state = TunerState(optimize_mode=optimize_mode, seed=seed, t0=t0, decay=decay, warmup=warmup)

    def best(self) -> tuple[dict[str, Scalar], float] | None:
        """Best history entry under optimize_mode; ties break to the earlier trial."""
        history = self.state.history
        if not history:
            return None
        pick = max if self.state.optimize_mode == "maximize" else min
        index = pick(range(len(history)), key=lambda i: history[i][1])
        return history[index]

    def propose(self, space: SearchSpace) -> dict[str, Scalar]:
        """Return the next assignment to evaluate."""
        state = self.state
        best = self.best()
        if state.proposals_made < state.warmup or best is None:
            assignment = sample_assignment(space, state.rng)
            state.proposals_made += 1
            state.anneal_steps += 1
            return assignment

        center, _ = best
        temperature = state.temperature
        assignment: dict[str, Scalar] = {}
        for name, spec in space.params.items():
            if spec.kind == ParamKind.QUNIFORM:
                sigma = temperature * (spec.high - spec.low)
                drawn = state.rng.normal(float(center[name]), sigma) if sigma > 0 else float(center[name])
                assignment[name] = quantize(drawn, spec)
            else:
                if state.rng.uniform() < temperature:
                    assignment[name] = spec.values[int(state.rng.integers(0, len(spec.values)))]
                else:
                    assignment[name] = center[name]
        state.proposals_made += 1
        state.anneal_steps += 1
        return assignment

    def observe(self, assignment: dict[str, Scalar], final_metric: float) -> None:
        """Record a finished trial's final metric; non-finite metrics are rejected."""
        if not math.isfinite(final_metric):
            logger.warning("discarding non-finite final metric %r for %s", final_metric, assignment)
            return
        self.state.history.append((dict(assignment), float(final_metric)))

    def maybe_reseed(self, sequence_id: int, policy: ReseedPolicy) -> bool:
        """Reseed rng and reset temperature when the policy fires; keep history."""
        if sequence_id < 0:
            raise ValueError(f"sequence_id must be >= 0, got {sequence_id}")
        if not policy.fires(sequence_id):
            return False
        self.state.rng = np.random.default_rng((self.state.seed, sequence_id))
        self.state.anneal_steps = 0
        logger.info("tuner reseeded at sequence_id %d", sequence_id)
        return True
