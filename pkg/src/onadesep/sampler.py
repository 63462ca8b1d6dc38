"""Annealed block Gibbs inference and ground-truth injection."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import MaskVector, SourceSet, Waveform, assemble_channels
from .errors import AlignmentError, ConfigError, DomainError
from .masking import AnnealConfig, anneal_rho, sample_gibbs_mask
from .model import SeparatorState, separate_batch


@dataclass(frozen=True)
class GibbsConfig:
    steps: int = 64
    alpha: float = 0.95
    seed: int = 0
    record_trajectory: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise DomainError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 < self.alpha <= 1.0:
            raise DomainError(f"alpha must lie in (0, 1], got {self.alpha}")

    @property
    def anneal(self) -> AnnealConfig:
        return AnnealConfig(self.steps, self.alpha)


@dataclass
class GibbsStep:
    step: int
    rho: float
    mask: MaskVector
    elided: bool
    # steps whose estimates were fed in as conditioning (-1 = initial zeros)
    consumed_from: tuple[int, ...]
    estimates: np.ndarray | None = None


@dataclass
class GibbsTrajectory:
    steps: list[GibbsStep] = field(default_factory=list)

    def __len__(self):
        return len(self.steps)

    @property
    def num_model_calls(self) -> int:
        return sum(not s.elided for s in self.steps)


def _require_conditioned(state: SeparatorState):
    if not state.config.conditioned:
        raise ConfigError("Gibbs sampling needs a conditioned model; this checkpoint is a mixture-only baseline")


def _mixture_array(mixture) -> tuple[np.ndarray, int]:
    if isinstance(mixture, Waveform):
        return mixture.samples, mixture.sample_rate
    return np.asarray(mixture), 16000


def gibbs_separate_batch(state: SeparatorState, mixtures: np.ndarray, cfg: GibbsConfig, seeds: Sequence[int]):
    """Run independent chains for a (B, T) batch of mixtures, one seed per chain.

    Each chain consumes its own random stream exactly as a single-mixture run
    would. Returns (B, I, T) estimates and a trajectory per chain.
    """
    _require_conditioned(state)
    mixtures = np.asarray(mixtures, dtype=np.float32)
    batch, length = mixtures.shape
    num_sources = state.config.num_sources
    anneal = cfg.anneal
    rngs = [np.random.default_rng(int(s)) for s in seeds]
    if len(rngs) != batch:
        raise AlignmentError(f"{len(rngs)} seeds for {batch} mixtures")

    current = np.zeros((batch, num_sources, length), dtype=np.float32)
    # step that last wrote each source, per chain
    provenance = np.full((batch, num_sources), -1, dtype=np.int64)
    trajectories = [GibbsTrajectory() for _ in range(batch)]
    for n in range(cfg.steps):
        rho = anneal_rho(n, anneal)
        masks = [sample_gibbs_mask(rho, num_sources, rng) for rng in rngs]
        masked = np.stack([m.as_array() for m in masks])
        active = masked.any(axis=1)
        for b in range(batch):
            trajectories[b].steps.append(
                GibbsStep(n, rho, masks[b], not active[b], tuple(provenance[b][~masked[b]].tolist()))
            )
        if active.any():
            rows = np.flatnonzero(active)
            channels = assemble_channels(mixtures[rows], current[rows], masked[rows])
            out = separate_batch(state, channels)
            for j, b in enumerate(rows):
                current[b, masked[b]] = out[j, masked[b]]
                provenance[b, masked[b]] = n
        if cfg.record_trajectory:
            for b in range(batch):
                trajectories[b].steps[-1].estimates = current[b].copy()
    return current, trajectories


def gibbs_separate(state: SeparatorState, mixture, cfg: GibbsConfig) -> tuple[SourceSet, GibbsTrajectory]:
    samples, sr = _mixture_array(mixture)
    est, trajs = gibbs_separate_batch(state, samples[None], cfg, [cfg.seed])
    return SourceSet.from_array(state.source_order, est[0], sr), trajs[0]


def one_step_separate(state: SeparatorState, mixture, seed: int = 0) -> SourceSet:
    est, _ = gibbs_separate(state, mixture, GibbsConfig(steps=1, seed=seed))
    return est


def inject_gt_batch(state: SeparatorState, mixtures: np.ndarray, injected_index: int, gt: np.ndarray) -> np.ndarray:
    """Single step with every source masked except `injected_index`, which carries `gt`."""
    _require_conditioned(state)
    num_sources = state.config.num_sources
    if not 0 <= injected_index < num_sources:
        raise DomainError(f"injected_index {injected_index} outside [0, {num_sources})")
    mixtures = np.asarray(mixtures, dtype=np.float32)
    gt = np.asarray(gt, dtype=np.float32)
    if gt.shape != mixtures.shape:
        raise AlignmentError(f"ground truth {gt.shape} does not match mixture {mixtures.shape}")
    batch, length = mixtures.shape
    conditioning = np.zeros((batch, num_sources, length), dtype=np.float32)
    conditioning[:, injected_index] = gt
    masked = np.ones((batch, num_sources), dtype=bool)
    masked[:, injected_index] = False
    out = separate_batch(state, assemble_channels(mixtures, conditioning, masked))
    out[:, injected_index] = gt
    return out


def inject_gt_separate(state: SeparatorState, mixture, injected_index: int, gt) -> SourceSet:
    """Returned set holds the ground truth (not an estimate) at `injected_index`."""
    samples, sr = _mixture_array(mixture)
    if not isinstance(gt, Waveform):
        gt = Waveform(np.asarray(gt), sr)
    if gt.sample_rate != sr:
        raise AlignmentError("ground truth and mixture sample rates differ")
    out = inject_gt_batch(state, samples[None], injected_index, gt.samples[None])[0]
    return SourceSet.from_array(state.source_order, out, sr).replace(injected_index, gt)
