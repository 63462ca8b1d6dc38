"""Training-mask sampling, Gibbs-mask sampling, and the masking-probability schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import MaskVector
from .errors import DomainError


@dataclass(frozen=True)
class AnnealConfig:
    total_steps: int
    alpha: float = 0.95

    def __post_init__(self):
        if int(self.total_steps) < 1:
            raise DomainError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")


def sample_training_mask(num_sources: int, rng: np.random.Generator) -> MaskVector:
    """Draw a non-empty masked set: size uniform on 1..I, then a uniform subset of that size."""
    if num_sources < 1:
        raise DomainError(f"need at least one source, got {num_sources}")
    k = int(rng.integers(1, num_sources + 1))
    chosen = rng.choice(num_sources, size=k, replace=False)
    masked = np.zeros(num_sources, dtype=bool)
    masked[chosen] = True
    return MaskVector(tuple(masked))


def anneal_rho(step: int, cfg: AnnealConfig) -> float:
    """Masking probability at Gibbs step n: 1 at n=0, falling linearly to 0 at n = alpha*N."""
    if step < 0 or step > cfg.total_steps:
        raise DomainError(f"step {step} outside [0, {cfg.total_steps}]")
    if step == 0:
        return 1.0
    return max(0.0, 1.0 - step / (cfg.alpha * cfg.total_steps))


def sample_gibbs_mask(rho: float, num_sources: int, rng: np.random.Generator) -> MaskVector:
    if not 0.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [0, 1], got {rho}")
    if num_sources < 1:
        raise DomainError(f"need at least one source, got {num_sources}")
    # always consume I uniforms so the stream position does not depend on rho
    draws = rng.random(num_sources)
    return MaskVector(tuple(draws < rho))
