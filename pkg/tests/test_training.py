import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from onadesep.core import MaskVector, SourceSet
from onadesep.errors import AlignmentError, ConfigError, DataError, DomainError
from onadesep.model import SeparatorConfig, init_separator
from onadesep.training import (
    TrainConfig,
    TrainingState,
    l1_loss,
    onade_loss,
    onade_loss_tensor,
    run_training,
    train_step_baseline,
    train_step_onade,
)

from conftest import make_example

MICRO = dict(depth=1, base_channels=2, kernel_size=4, stride=2, bottleneck_recurrent_layers=0)


def S(*rows):
    return SourceSet.from_array([f"s{i}" for i in range(len(rows))], np.array(rows, dtype=float), 8)


def test_l1_examples():
    a = S([0.3, -0.2], [1.0, 2.0])
    assert l1_loss(a, a) == 0.0
    assert l1_loss(S([0, 0]), S([1, -1])) == 1.0
    assert l1_loss(S([0, 1], [0, 0]), S([1, 1], [0, 2])) == 0.75
    with pytest.raises(AlignmentError):
        l1_loss(S([0, 1]), S([0, 1], [0, 1]))


def test_onade_examples():
    est, tgt = S([0, 1], [5, 5]), S([1, 1], [0, 2])
    assert onade_loss(est, tgt, MaskVector((True, False))) == 0.5
    assert onade_loss(S([0, 1], [-9, 9]), tgt, MaskVector((True, False))) == 0.5
    assert onade_loss(S([1, 1], [7, 7]), tgt, MaskVector((True, False))) == 0.0
    with pytest.raises(DomainError):
        onade_loss(est, tgt, MaskVector((False, False)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_onade_all_masked_equals_l1(n, t, seed):
    rng = np.random.default_rng(seed)
    est = SourceSet.from_array([str(i) for i in range(n)], rng.standard_normal((n, t)), 8)
    tgt = SourceSet.from_array([str(i) for i in range(n)], rng.standard_normal((n, t)), 8)
    assert onade_loss(est, tgt, MaskVector.all_masked(n)) == l1_loss(est, tgt)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.booleans(), min_size=2, max_size=5).filter(any), st.integers(0, 2**32 - 1))
def test_onade_ignores_unmasked(bits, seed):
    rng = np.random.default_rng(seed)
    n = len(bits)
    names = [str(i) for i in range(n)]
    est = rng.standard_normal((n, 16))
    tgt = SourceSet.from_array(names, rng.standard_normal((n, 16)), 8)
    mask = MaskVector(tuple(bits))
    perturbed = est.copy()
    perturbed[~mask.as_array()] += rng.standard_normal(((~mask.as_array()).sum(), 16)) * 1e3
    a = onade_loss(SourceSet.from_array(names, est, 8), tgt, mask)
    b = onade_loss(SourceSet.from_array(names, perturbed, 8), tgt, mask)
    assert a == b


def test_onade_tensor_matches_reference():
    rng = np.random.default_rng(0)
    est = rng.standard_normal((3, 4, 50))
    tgt = rng.standard_normal((3, 4, 50))
    masks = np.array([[1, 0, 0, 1], [1, 1, 1, 1], [0, 0, 1, 0]], dtype=bool)
    got = float(onade_loss_tensor(torch.tensor(est), torch.tensor(tgt), torch.tensor(masks)))
    names = list("abcd")
    want = np.mean([
        onade_loss(SourceSet.from_array(names, e, 8), SourceSet.from_array(names, t, 8), MaskVector(tuple(m)))
        for e, t, m in zip(est, tgt, masks)
    ])
    assert got == pytest.approx(want, rel=1e-12)


def small_dataset(n=6, T=256, seed=0):
    rng = np.random.default_rng(seed)
    return [make_example(rng.uniform(-0.3, 0.3, (2, T)), names=["a", "b"], start=i) for i in range(n)]


def test_train_config_mode_contract():
    with pytest.raises(ConfigError):
        TrainConfig(mode="onade").check_model(SeparatorConfig(conditioned=False))
    with pytest.raises(ConfigError):
        TrainConfig(mode="baseline").check_model(SeparatorConfig(conditioned=True))
    with pytest.raises(ConfigError):
        TrainConfig(mode="other")


@pytest.mark.parametrize("mode", ["onade", "baseline"])
def test_train_step_deterministic(mode):
    cfg = SeparatorConfig(num_sources=2, conditioned=mode == "onade", **MICRO)
    batch = small_dataset(3)
    step = train_step_onade if mode == "onade" else train_step_baseline
    outs = []
    for _ in range(2):
        ts = TrainingState.create(init_separator(cfg, 0, ["a", "b"]), 1e-3)
        for k in range(3):
            step(ts, batch, np.random.default_rng(k))
        outs.append(ts.model.parameters)
    assert all(outs[0][k].tobytes() == outs[1][k].tobytes() for k in outs[0])


def test_mask_histogram_uniform():
    cfg = SeparatorConfig(num_sources=4, **MICRO)
    rng = np.random.default_rng(0)
    ex = make_example(rng.uniform(-0.3, 0.3, (4, 8)))
    ts = TrainingState.create(init_separator(cfg, 0, ex.sources.names), 1e-4)
    rng = np.random.default_rng(1)
    counts = np.zeros(4, dtype=int)
    for _ in range(2500):
        _, rec = train_step_onade(ts, [ex] * 4, rng)
        counts += rec.mask_histogram
    assert counts.sum() == 10_000
    assert stats.chisquare(counts).pvalue > 0.001


def test_teacher_forcing_hook():
    cfg = SeparatorConfig(num_sources=2, **MICRO)
    batch = small_dataset(4)
    seen = []

    def hook(channels, masked, targets):
        for c, m, t in zip(channels, masked, targets):
            for i in range(2):
                if not m[i]:
                    assert c[1 + i].tobytes() == t[i].tobytes()
                else:
                    assert np.all(c[1 + i] == 0) and np.all(c[3 + i] == 1)
            seen.append(m.copy())

    ts = TrainingState.create(init_separator(cfg, 0, ["a", "b"]), 1e-3)
    ts.input_hook = hook
    rng = np.random.default_rng(0)
    for _ in range(10):
        train_step_onade(ts, batch, rng)
    assert any(not m.all() for m in seen)


def test_baseline_zero_output_loss():
    cfg = SeparatorConfig(num_sources=2, conditioned=False, **MICRO)
    state = init_separator(cfg, 0, ["a", "b"])
    last = f"decoder.{cfg.depth - 1}.conv_tr"
    with torch.no_grad():
        getattr(state.module.get_submodule(last), "weight").zero_()
        getattr(state.module.get_submodule(last), "bias").zero_()
    batch = small_dataset(4)
    _, rec = train_step_baseline(TrainingState.create(state, 1e-3), batch)
    want = np.mean([np.abs(ex.sources.to_array()).mean() for ex in batch])
    assert rec.loss == pytest.approx(want, rel=1e-5)


def test_baseline_input_channels():
    assert init_separator(SeparatorConfig(conditioned=False, **MICRO), 0).parameters["encoder.0.conv.weight"].shape[1] == 1


@pytest.mark.parametrize("mode", ["onade", "baseline"])
def test_overfit_single_example(mode):
    t = np.arange(1024) / 16000
    ex = make_example(np.stack([0.3 * np.sin(2 * np.pi * 220 * t), 0.2 * np.sign(np.sin(2 * np.pi * 50 * t))]))
    cfg = SeparatorConfig(num_sources=2, depth=3, base_channels=8, conditioned=mode == "onade")
    state, records = run_training(
        TrainConfig(mode=mode, learning_rate=3e-3, batch_size=8, total_steps=500, seed=0), [ex], cfg
    )
    assert np.mean([r.loss for r in records[-10:]]) < 0.01


def test_run_training_loop_and_checkpoints(tmp_path):
    cfg = SeparatorConfig(num_sources=2, **MICRO)
    data = small_dataset(5)
    state, records = run_training(
        TrainConfig(total_steps=10, checkpoint_every=5, batch_size=2, seed=4), data, cfg, out_dir=tmp_path
    )
    assert [r.step for r in records] == list(range(1, 11))
    assert all(np.isfinite(r.loss) for r in records)
    assert sorted(p.name for p in (tmp_path / "checkpoints").glob("*.ckpt")) == ["step_000005.ckpt", "step_000010.ckpt"]
    lines = (tmp_path / "train_log.csv").read_text().splitlines()
    assert lines[0] == "step,loss,masked_size_counts,wall_time_s"
    assert len(lines) == 11


def test_resume_matches_uninterrupted(tmp_path):
    cfg = SeparatorConfig(num_sources=2, **MICRO)
    data = small_dataset(5)
    tc = TrainConfig(total_steps=10, checkpoint_every=5, batch_size=2, seed=4, learning_rate=1e-2)
    full, _ = run_training(tc, data, cfg, out_dir=tmp_path / "full")
    resumed, recs = run_training(
        tc, data, cfg, out_dir=tmp_path / "resumed", resume_from=tmp_path / "full" / "checkpoints" / "step_000005.ckpt"
    )
    assert [r.step for r in recs] == [6, 7, 8, 9, 10]
    a, b = full.parameters, resumed.parameters
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)


def test_run_training_empty_dataset():
    with pytest.raises(DataError):
        run_training(TrainConfig(total_steps=1), [], SeparatorConfig(**MICRO))
