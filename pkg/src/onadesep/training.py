"""L1 objectives and the baseline / orderless-NADE training loops."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .core import MaskVector, SourceSet, assemble_channels
from .data import MixtureExample
from .errors import AlignmentError, ConfigError, DataError, DomainError, NumericalError
from .masking import sample_training_mask
from .model import SeparatorConfig, SeparatorState, init_separator, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

MODES = ("baseline", "onade")
LOG_COLUMNS = ("step", "loss", "masked_size_counts", "wall_time_s")


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "onade"
    learning_rate: float = 3e-4
    batch_size: int = 8
    total_steps: int = 3000
    seed: int = 0
    checkpoint_every: int = 500

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size < 1 or self.total_steps < 1 or self.checkpoint_every < 1:
            raise ConfigError("batch_size, total_steps and checkpoint_every must be positive")

    def check_model(self, model_cfg: SeparatorConfig):
        if model_cfg.conditioned != (self.mode == "onade"):
            need = "conditioned" if self.mode == "onade" else "unconditioned"
            raise ConfigError(f"mode={self.mode} requires a {need} model (got {model_cfg.in_channels} input channels)")


@dataclass
class TrainRecord:
    step: int
    loss: float
    mask_histogram: tuple[int, ...]
    wall_time: float


@dataclass
class TrainingState:
    """Model plus optimizer; the only mutable object during training."""

    model: SeparatorState
    optimizer: torch.optim.Optimizer
    step: int = 0
    input_hook: Callable | None = field(default=None, repr=False)

    @classmethod
    def create(cls, model: SeparatorState, learning_rate: float) -> "TrainingState":
        return cls(model, torch.optim.Adam(model.module.parameters(), lr=learning_rate))


def _per_source_l1(est: np.ndarray, tgt: np.ndarray) -> np.ndarray:
    return np.mean(np.abs(est - tgt), axis=-1)


def _check_pair(estimates: SourceSet, targets: SourceSet):
    if len(estimates) != len(targets) or estimates.num_samples != targets.num_samples:
        raise AlignmentError(
            f"estimates ({len(estimates)} x {estimates.num_samples}) do not match "
            f"targets ({len(targets)} x {targets.num_samples})"
        )


def l1_loss(estimates: SourceSet, targets: SourceSet) -> float:
    _check_pair(estimates, targets)
    per_source = _per_source_l1(estimates.to_array(np.float64), targets.to_array(np.float64))
    return float(np.mean(per_source))


def onade_loss(estimates: SourceSet, targets: SourceSet, mask: MaskVector) -> float:
    """Mean over masked sources of per-source mean absolute error."""
    _check_pair(estimates, targets)
    if len(mask) != len(targets):
        raise AlignmentError(f"mask has {len(mask)} entries for {len(targets)} sources")
    if mask.num_masked == 0:
        raise DomainError("onade_loss needs at least one masked source")
    per_source = _per_source_l1(estimates.to_array(np.float64), targets.to_array(np.float64))
    return float(np.mean(per_source[mask.as_array()]))


def l1_loss_tensor(est: torch.Tensor, tgt: torch.Tensor, masked=None) -> torch.Tensor:
    return (est - tgt).abs().mean(dim=-1).mean()


def onade_loss_tensor(est: torch.Tensor, tgt: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
    """Batched orderless-NADE loss; est/tgt (..., I, T), masked (..., I) bool."""
    per_source = (est - tgt).abs().mean(dim=-1)
    masked = masked.to(torch.bool)
    if not bool(masked.any(dim=-1).all()):
        raise DomainError("every example needs at least one masked source")
    selected = torch.where(masked, per_source, torch.zeros_like(per_source))
    per_example = selected.sum(dim=-1) / masked.sum(dim=-1).to(per_source.dtype)
    return per_example.mean()


def _stack(batch: Sequence[MixtureExample]):
    mixtures = np.stack([ex.mixture.samples for ex in batch]).astype(np.float32)
    targets = np.stack([ex.sources.to_array(np.float32) for ex in batch])
    return mixtures, targets


def _apply_update(ts: TrainingState, channels, targets, masked, loss_fn, histogram, started) -> TrainRecord:
    module = ts.model.module
    module.train()
    x = torch.from_numpy(np.ascontiguousarray(channels)).to(ts.model.dtype)
    y = torch.from_numpy(np.ascontiguousarray(targets)).to(ts.model.dtype)
    loss = loss_fn(module(x), y, None if masked is None else torch.from_numpy(masked))
    value = float(loss.detach())
    if not np.isfinite(value):
        raise NumericalError(
            f"non-finite loss at step {ts.step + 1}",
            {"step": ts.step + 1, "loss": value, "mask_histogram": histogram},
        )
    ts.optimizer.zero_grad(set_to_none=True)
    loss.backward()
    ts.optimizer.step()
    ts.step += 1
    return TrainRecord(ts.step, value, tuple(histogram), time.perf_counter() - started)


def train_step_onade(ts: TrainingState, batch: Sequence[MixtureExample], rng: np.random.Generator):
    """One teacher-forced orderless-NADE update; returns (model state, record)."""
    if not ts.model.config.conditioned:
        raise ConfigError("orderless-NADE training needs a conditioned model")
    if not batch:
        raise DataError("empty batch")
    started = time.perf_counter()
    num_sources = ts.model.config.num_sources
    mixtures, targets = _stack(batch)
    masked = np.stack([sample_training_mask(num_sources, rng).as_array() for _ in batch])
    channels = assemble_channels(mixtures, targets, masked)
    if ts.input_hook is not None:
        ts.input_hook(channels, masked, targets)
    histogram = np.bincount(masked.sum(axis=1), minlength=num_sources + 1)[1:]
    record = _apply_update(ts, channels, targets, masked, onade_loss_tensor, histogram, started)
    return ts.model, record


def train_step_baseline(ts: TrainingState, batch: Sequence[MixtureExample], rng: np.random.Generator | None = None):
    if ts.model.config.conditioned:
        raise ConfigError("baseline training needs an unconditioned (mixture-only) model")
    if not batch:
        raise DataError("empty batch")
    started = time.perf_counter()
    mixtures, targets = _stack(batch)
    channels = mixtures[:, None, :]
    if ts.input_hook is not None:
        ts.input_hook(channels, None, targets)
    histogram = [0] * ts.model.config.num_sources
    record = _apply_update(ts, channels, targets, None, l1_loss_tensor, histogram, started)
    return ts.model, record


def batch_indices(num_examples: int, batch_size: int, step: int, seed: int) -> np.ndarray:
    """Indices for 1-based `step` from per-epoch shuffles; a pure function of its arguments."""
    start = (step - 1) * batch_size
    idx = []
    while len(idx) < batch_size:
        epoch, offset = divmod(start + len(idx), num_examples)
        perm = np.random.default_rng([seed, 0, epoch]).permutation(num_examples)
        take = min(batch_size - len(idx), num_examples - offset)
        idx.extend(perm[offset : offset + take].tolist())
    return np.array(idx)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1, step])


def checkpoint_path(out_dir, step: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{step:06d}.ckpt"


def save_training_state(ts: TrainingState, out_dir) -> Path:
    path = save_checkpoint(ts.model, checkpoint_path(out_dir, ts.step))
    torch.save({"step": ts.step, "optimizer": ts.optimizer.state_dict()}, path.with_suffix(".optim"))
    return path


def load_training_state(path, learning_rate: float) -> TrainingState:
    path = Path(path)
    model = load_checkpoint(path)
    ts = TrainingState.create(model, learning_rate)
    blob = torch.load(path.with_suffix(".optim"), weights_only=True)
    ts.optimizer.load_state_dict(blob["optimizer"])
    ts.step = int(blob["step"])
    return ts


def write_log(records: Sequence[TrainRecord], path, append: bool = False) -> Path:
    path = Path(path)
    new = not (append and path.exists())
    with open(path, "w" if new else "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(LOG_COLUMNS)
        for r in records:
            writer.writerow([r.step, f"{r.loss:.8g}", ";".join(map(str, r.mask_histogram)), f"{r.wall_time:.4f}"])
    return path


def run_training(
    cfg: TrainConfig,
    dataset: Sequence[MixtureExample],
    model_cfg: SeparatorConfig,
    out_dir=None,
    source_order: Sequence[str] | None = None,
    resume_from=None,
    model_seed: int | None = None,
    input_hook: Callable | None = None,
):
    """Train for cfg.total_steps steps; returns (final model state, records of this run)."""
    cfg.check_model(model_cfg)
    if not dataset:
        raise DataError("training dataset is empty after windowing/activity filtering")
    if source_order is None:
        source_order = dataset[0].sources.names
    if resume_from is not None:
        ts = load_training_state(resume_from, cfg.learning_rate)
        if ts.model.config != model_cfg:
            raise ConfigError("checkpoint config differs from the requested model config")
    else:
        seed = cfg.seed if model_seed is None else model_seed
        ts = TrainingState.create(init_separator(model_cfg, seed, source_order), cfg.learning_rate)
    ts.input_hook = input_hook
    step_fn = train_step_onade if cfg.mode == "onade" else train_step_baseline

    records = []
    log_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "train_log.csv"
        if resume_from is None or not log_path.exists():
            write_log([], log_path)
    t0 = time.perf_counter()
    while ts.step < cfg.total_steps:
        step = ts.step + 1
        batch = [dataset[i] for i in batch_indices(len(dataset), cfg.batch_size, step, cfg.seed)]
        _, record = step_fn(ts, batch, step_rng(cfg.seed, step))
        record.wall_time = time.perf_counter() - t0
        records.append(record)
        if log_path is not None:
            write_log([record], log_path, append=True)
        if step % 100 == 0 or step == cfg.total_steps:
            log.info("step %d/%d loss %.5f", step, cfg.total_steps, record.loss)
        if out_dir is not None and (step % cfg.checkpoint_every == 0 or step == cfg.total_steps):
            save_training_state(ts, out_dir)
    ts.model.module.eval()
    return ts.model, records
