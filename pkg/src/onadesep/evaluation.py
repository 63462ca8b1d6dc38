"""SI-SDR metrics and the step-sweep, baseline and ground-truth injection experiments."""

from __future__ import annotations

import hashlib
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import Waveform
from .data import MixtureExample
from .errors import AlignmentError, ConfigError, DataError, DomainError
from .model import SeparatorState, separate_batch
from .sampler import GibbsConfig, gibbs_separate_batch, inject_gt_batch

SDR_CAP_DB = 100.0
CI_Z = 1.96
DEFAULT_GRID = (1, 4, 16, 64, 128, 256, 512)


@dataclass(frozen=True)
class MetricResult:
    track_id: str
    source: str
    condition: str
    si_sdr_db: float
    si_sdri_db: float


def _as_array(x) -> np.ndarray:
    return np.asarray(x.samples if isinstance(x, Waveform) else x, dtype=np.float64)


def si_sdr(est, ref) -> float:
    """Scale-invariant SDR in dB, clipped to +/-100 dB.

    Zero residual gives +100; zero projected target energy gives -100.
    """
    est, ref = _as_array(est), _as_array(ref)
    if est.shape != ref.shape:
        raise AlignmentError(f"estimate {est.shape} and reference {ref.shape} differ in length")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0.0:
        raise DomainError("si_sdr is undefined for an all-zero reference")
    scale = np.dot(est, ref) / ref_energy
    target = scale * ref
    residual = est - target
    num = np.dot(target, target)
    den = np.dot(residual, residual)
    if num == 0.0:
        return -SDR_CAP_DB
    if den == 0.0:
        return SDR_CAP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SDR_CAP_DB, SDR_CAP_DB))


def si_sdri(est, ref, mixture) -> float:
    return si_sdr(est, ref) - si_sdr(mixture, ref)


def example_id(ex: MixtureExample) -> str:
    return f"{ex.track_id}:{ex.window_start}"


def chain_seed(base_seed: int, ex: MixtureExample, steps: int) -> int:
    digest = hashlib.sha256(f"{base_seed}|{example_id(ex)}|{steps}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1


def _score(eval_set, estimates, names, condition, skip=None) -> list[MetricResult]:
    results = []
    for ex, est in zip(eval_set, estimates):
        mixture = ex.mixture.samples
        for i, name in enumerate(names):
            if skip is not None and i == skip:
                continue
            ref = ex.sources[i].samples
            if not np.any(ref):
                # silent reference: SI-SDR undefined
                continue
            sdr = si_sdr(est[i], ref)
            results.append(MetricResult(example_id(ex), name, condition, sdr, sdr - si_sdr(mixture, ref)))
    return results


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _check_eval_set(state: SeparatorState, eval_set: Sequence[MixtureExample]):
    if not eval_set:
        raise DataError("evaluation set is empty")
    if tuple(eval_set[0].sources.names) != tuple(state.source_order):
        raise ConfigError(
            f"model source order {state.source_order} does not match data {eval_set[0].sources.names}"
        )


def onade_condition(steps: int) -> str:
    return f"onade_N={steps}"


def run_gibbs_sweep(
    state: SeparatorState,
    eval_set: Sequence[MixtureExample],
    steps_grid: Sequence[int] = DEFAULT_GRID,
    seed: int = 0,
    alpha: float = 0.95,
    batch_size: int = 16,
):
    """Gibbs-separate every example at every N in the grid; returns (results, summary)."""
    if not state.config.conditioned:
        raise ConfigError("the Gibbs sweep needs a conditioned model")
    _check_eval_set(state, eval_set)
    results = []
    for steps in steps_grid:
        cfg = GibbsConfig(steps=int(steps), alpha=alpha, seed=seed)
        cond = onade_condition(int(steps))
        for chunk in _chunks(list(eval_set), batch_size):
            mixtures = np.stack([ex.mixture.samples for ex in chunk])
            seeds = [chain_seed(seed, ex, int(steps)) for ex in chunk]
            est, _ = gibbs_separate_batch(state, mixtures, cfg, seeds)
            results.extend(_score(chunk, est, state.source_order, cond))
    return results, summarize(results)


def run_baseline_eval(state: SeparatorState, eval_set: Sequence[MixtureExample], batch_size: int = 16) -> list[MetricResult]:
    if state.config.conditioned:
        raise ConfigError("baseline evaluation expects a mixture-only model, got a conditioned one")
    _check_eval_set(state, eval_set)
    results = []
    for chunk in _chunks(list(eval_set), batch_size):
        mixtures = np.stack([ex.mixture.samples for ex in chunk]).astype(np.float32)
        est = separate_batch(state, mixtures[:, None, :])
        results.extend(_score(chunk, est, state.source_order, "baseline"))
    return results


def run_gt_injection(state: SeparatorState, eval_set: Sequence[MixtureExample], seed: int = 0, batch_size: int = 16):
    """Returns (I x I matrix of mean SI-SDRi gains, per-example results).

    Row j = injected source, column i = estimated source; the diagonal is NaN.
    The reference is a single all-masked step.
    """
    if not state.config.conditioned:
        raise ConfigError("ground-truth injection needs a conditioned model")
    _check_eval_set(state, eval_set)
    names = state.source_order
    num_sources = len(names)
    one_step = GibbsConfig(steps=1, seed=seed)
    results = []
    gains = defaultdict(list)
    for chunk in _chunks(list(eval_set), batch_size):
        mixtures = np.stack([ex.mixture.samples for ex in chunk])
        ref_est, _ = gibbs_separate_batch(state, mixtures, one_step, [chain_seed(seed, ex, 1) for ex in chunk])
        ref_scores = _score(chunk, ref_est, names, onade_condition(1))
        results.extend(ref_scores)
        ref_lookup = {(r.track_id, r.source): r.si_sdri_db for r in ref_scores}
        for j in range(num_sources):
            gt = np.stack([ex.sources[j].samples for ex in chunk])
            est = inject_gt_batch(state, mixtures, j, gt)
            scored = _score(chunk, est, names, f"inject={names[j]}", skip=j)
            results.extend(scored)
            for r in scored:
                gains[(j, names.index(r.source))].append(r.si_sdri_db - ref_lookup[(r.track_id, r.source)])
    matrix = np.full((num_sources, num_sources), np.nan)
    for (j, i), vals in gains.items():
        matrix[j, i] = float(np.mean(vals))
    return matrix, results


@dataclass(frozen=True)
class SummaryRow:
    source: str
    condition: str
    n: int
    mean_si_sdri_db: float
    ci_low_db: float
    ci_high_db: float


def mean_ci(values: Sequence[float]) -> tuple[float, float, float]:
    """Mean and normal-approximation 95% interval over tracks."""
    vals = np.asarray(values, dtype=np.float64)
    mean = float(np.mean(vals))
    half = CI_Z * float(np.std(vals, ddof=1)) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
    return mean, mean - half, mean + half


def summarize(results: Sequence[MetricResult]) -> list[SummaryRow]:
    groups: dict[tuple[str, str], list[float]] = {}
    for r in results:
        groups.setdefault((r.source, r.condition), []).append(r.si_sdri_db)
    rows = []
    for (source, condition), vals in groups.items():
        mean, lo, hi = mean_ci(vals)
        rows.append(SummaryRow(source, condition, len(vals), mean, lo, hi))
    return rows


def summary_table(results: Sequence[MetricResult]) -> dict[tuple[str, str], float]:
    """(source, condition) -> mean SI-SDRi."""
    return {(r.source, r.condition): r.mean_si_sdri_db for r in summarize(results)}
