"""Command-line entry point: generate, train, separate, sweep, inject."""

from __future__ import annotations

import argparse
import csv
import logging
import shutil
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import RunConfig, derive_seed, load_config
from .data import (
    load_stem_dataset,
    read_wav,
    save_stem_dataset,
    split_tracks,
    synth_generate,
    window_dataset,
    write_wav,
)
from .errors import ConfigError, OnadesepError
from .evaluation import run_baseline_eval, run_gibbs_sweep, run_gt_injection, si_sdri
from .model import load_checkpoint, save_checkpoint
from .report import emit_report
from .sampler import GibbsConfig, gibbs_separate
from .training import run_training

log = logging.getLogger("onadesep")


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise OnadesepError(f"output directory {out} is not empty (use --force to overwrite)")
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def cmd_generate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    _prepare_out(out, args.force)
    synth = cfg.synth()
    tracks = synth_generate(synth)
    save_stem_dataset(tracks, out)
    cfg.write(out)
    total = sum(s.num_samples / s.sample_rate for _, s in tracks)
    print(f"wrote {len(tracks)} tracks ({total:.1f} s of audio) to {out}")
    return 0


def _split(cfg: RunConfig, data_dir, which: str):
    spec = cfg.window()
    tracks = load_stem_dataset(data_dir, spec.sample_rate)
    train, held_out = split_tracks(tracks, cfg.eval().num_eval_tracks)
    return window_dataset(train if which == "train" else held_out, spec), tracks[0][1].names


def cmd_train(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    examples, names = _split(cfg, args.data, "train")
    tc = cfg.train(args.mode)
    model_cfg = cfg.model(len(names), args.mode == "onade")
    if args.resume:
        resumed = load_checkpoint(args.resume)
        if resumed.config.conditioned != model_cfg.conditioned:
            raise ConfigError(
                f"--mode {args.mode} cannot resume a checkpoint with {resumed.config.in_channels} input channel(s)"
            )
    print(f"training {args.mode} on {len(examples)} windows for {tc.total_steps} steps")
    state, records = run_training(
        tc, examples, model_cfg, out_dir=out, source_order=names, resume_from=args.resume,
        model_seed=derive_seed(cfg.seed, f"model:{args.mode}"),
    )
    save_checkpoint(state, out / "model.ckpt")
    print(f"final loss {records[-1].loss:.5f}; checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_separate(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    state = load_checkpoint(args.checkpoint, expect_conditioned=True)
    mixture = read_wav(args.input)
    seed = args.seed if args.seed is not None else cfg.gibbs().seed
    gcfg = GibbsConfig(steps=args.steps, alpha=cfg.gibbs().alpha, seed=seed, record_trajectory=args.references is not None)
    estimates, traj = gibbs_separate(state, mixture, gcfg)
    for name, w in estimates:
        write_wav(out / f"{name}.wav", w)

    refs = None
    if args.references:
        ref_dir = Path(args.references)
        refs = {}
        for f in ref_dir.glob("*.wav"):
            refs[f.stem.split("_", 1)[-1]] = read_wav(f, mixture.sample_rate).samples
    with open(out / "trajectory.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "rho", "mask_bits", "per_source_si_sdri"])
        for s in traj.steps:
            metrics = ""
            if refs is not None and s.estimates is not None:
                metrics = ";".join(
                    f"{name}:{si_sdri(s.estimates[i], refs[name], mixture.samples):.4f}"
                    for i, name in enumerate(state.source_order)
                    if name in refs and np.any(refs[name])
                )
            w.writerow([s.step, f"{s.rho:.6f}", s.mask.bits, metrics])
    print(f"wrote {len(estimates)} stems and trajectory.csv to {out} ({traj.num_model_calls} model calls)")
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    eval_set, _ = _split(cfg, args.data, "eval")
    grid = tuple(int(s) for s in args.grid.split(",")) if args.grid else cfg.eval().steps_grid
    state = load_checkpoint(args.checkpoint, expect_conditioned=True)
    results, _ = run_gibbs_sweep(
        state, eval_set, grid, seed=cfg.gibbs().seed, alpha=cfg.gibbs().alpha, batch_size=cfg.eval().batch_size
    )
    if args.baseline_checkpoint:
        baseline = load_checkpoint(args.baseline_checkpoint, expect_conditioned=False)
        results = run_baseline_eval(baseline, eval_set, cfg.eval().batch_size) + results
    written = emit_report(results, out)
    print(f"evaluated {len(eval_set)} windows at N in {list(grid)}; wrote {len(written)} files to {out}")
    return 0


def cmd_inject(args, cfg: RunConfig) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out)
    eval_set, _ = _split(cfg, args.data, "eval")
    state = load_checkpoint(args.checkpoint, expect_conditioned=True)
    matrix, results = run_gt_injection(state, eval_set, seed=cfg.gibbs().seed, batch_size=cfg.eval().batch_size)
    emit_report(results, out, injection=(matrix, state.source_order))
    print("mean SI-SDRi gain (rows: injected source, columns: estimated source)")
    width = max(len(n) for n in state.source_order) + 2
    print(" " * width + "".join(n.rjust(width) for n in state.source_order))
    for j, name in enumerate(state.source_order):
        cells = ("--" if i == j else f"{matrix[j, i]:+.2f}" for i in range(len(state.source_order)))
        print(name.ljust(width) + "".join(c.rjust(width) for c in cells))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onadesep", description=__doc__)
    p.add_argument("--version", action="version", version=f"onadesep {__version__}")
    p.add_argument("--jobs", type=int, default=1, help="worker threads for tensor math")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value run configuration file")
        sp.add_argument("--out", required=True, help="run output directory")

    g = sub.add_parser("generate", help="write a synthetic stem dataset")
    common(g)
    g.add_argument("--force", action="store_true", help="overwrite a non-empty --out")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a baseline or orderless-NADE separator")
    common(t)
    t.add_argument("--mode", choices=["baseline", "onade"], required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--resume", help="training checkpoint to resume from")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("separate", help="Gibbs-sample source estimates for one mixture WAV")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--steps", type=int, default=64)
    s.add_argument("--seed", type=int)
    s.add_argument("--references", help="directory of reference stems (<nn>_<name>.wav) for trajectory metrics")
    s.set_defaults(func=cmd_separate)

    w = sub.add_parser("sweep", help="SI-SDRi versus number of Gibbs steps")
    common(w)
    w.add_argument("--checkpoint", required=True)
    w.add_argument("--baseline-checkpoint")
    w.add_argument("--data", required=True)
    w.add_argument("--grid", help="comma-separated step counts (default from config)")
    w.set_defaults(func=cmd_sweep)

    i = sub.add_parser("inject", help="ground-truth injection matrix")
    common(i)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--data", required=True)
    i.set_defaults(func=cmd_inject)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    torch.set_num_threads(max(1, args.jobs))
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except (OnadesepError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
