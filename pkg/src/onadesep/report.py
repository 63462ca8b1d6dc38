"""CSV tables and step-sweep figures for evaluation results."""

from __future__ import annotations

import csv
import re
from pathlib import Path
from typing import Sequence

import numpy as np
from matplotlib.figure import Figure

from .evaluation import MetricResult, summarize

RESULT_COLUMNS = ("track_id", "source", "condition", "si_sdr_db", "si_sdri_db")
SUMMARY_COLUMNS = ("source", "condition", "n", "mean_si_sdri_db", "ci_low_db", "ci_high_db")
_STEPS_RE = re.compile(r"^onade_N=(\d+)$")


def _f(x: float) -> str:
    return "" if x is None or np.isnan(x) else f"{x:.6f}"


def write_results_csv(results: Sequence[MetricResult], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.track_id, r.source, r.condition, _f(r.si_sdr_db), _f(r.si_sdri_db)])
    return path


def write_summary_csv(results: Sequence[MetricResult], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for row in summarize(results):
            w.writerow([row.source, row.condition, row.n, _f(row.mean_si_sdri_db), _f(row.ci_low_db), _f(row.ci_high_db)])
    return path


def write_injection_csv(matrix: np.ndarray, names: Sequence[str], path) -> Path:
    """Rows: injected ground-truth source. Columns: estimated source. Blank diagonal."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["injected", *names])
        for j, name in enumerate(names):
            w.writerow([name, *("" if i == j else _f(matrix[j, i]) for i in range(len(names)))])
    return path


def read_injection_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    matrix = np.array([[float(v) if v else np.nan for v in row[1:]] for row in rows[1:]])
    return names, matrix


def sweep_curves(results: Sequence[MetricResult]):
    """source -> (steps, mean, ci_low, ci_high) for the Gibbs conditions, sorted by steps."""
    curves = {}
    for row in summarize(results):
        m = _STEPS_RE.match(row.condition)
        if m:
            curves.setdefault(row.source, []).append((int(m.group(1)), row.mean_si_sdri_db, row.ci_low_db, row.ci_high_db))
    return {s: tuple(np.array(v) for v in zip(*sorted(pts))) for s, pts in curves.items()}


def sweep_figure(source: str, curve, baseline_mean: float | None) -> Figure:
    """Mean SI-SDRi against Gibbs steps (log x) with CI band and dotted baseline."""
    steps, mean, lo, hi = curve
    fig = Figure(figsize=(4.5, 3.2))
    ax = fig.add_subplot()
    ax.plot(steps, mean, marker="o", color="C0", label="orderless NADE + Gibbs")
    ax.fill_between(steps, lo, hi, color="C0", alpha=0.25, linewidth=0)
    if baseline_mean is not None:
        ax.axhline(baseline_mean, color="C3", linestyle=":", label="baseline")
    ax.set_xscale("log")
    ax.set_xticks(steps)
    ax.set_xticklabels([str(int(s)) for s in steps])
    ax.minorticks_off()
    ax.set_xlabel("Gibbs steps")
    ax.set_ylabel("SI-SDRi (dB)")
    ax.set_title(source)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    return fig


def plot_sweep(source: str, curve, baseline_mean: float | None, path) -> Path:
    sweep_figure(source, curve, baseline_mean).savefig(path, dpi=120)
    return Path(path)


def emit_report(results: Sequence[MetricResult], out_dir, injection=None) -> dict[str, Path]:
    """Write results.csv, summary.csv, per-source sweep plots and (optionally) injection_matrix.csv.

    injection is an (matrix, source_names) pair from run_gt_injection.
    """
    if not results and injection is None:
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out_dir}: {exc}") from exc
    written = {}
    if results:
        written["results"] = write_results_csv(results, out_dir / "results.csv")
        written["summary"] = write_summary_csv(results, out_dir / "summary.csv")
        baselines = {r.source: r.mean_si_sdri_db for r in summarize(results) if r.condition == "baseline"}
        for source, curve in sweep_curves(results).items():
            written[f"plot:{source}"] = plot_sweep(source, curve, baselines.get(source), out_dir / f"{source}_sweep.png")
    if injection is not None:
        matrix, names = injection
        written["injection"] = write_injection_csv(matrix, names, out_dir / "injection_matrix.csv")
    return written
