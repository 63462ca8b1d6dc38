import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from onadesep.errors import DomainError
from onadesep.masking import AnnealConfig, anneal_rho, sample_gibbs_mask, sample_training_mask


def test_training_mask_single_source():
    rng = np.random.default_rng(0)
    assert all(sample_training_mask(1, rng).masked == (True,) for _ in range(100))


def test_training_mask_rejects_zero():
    with pytest.raises(DomainError):
        sample_training_mask(0, np.random.default_rng(0))


def test_training_mask_size_uniform():
    rng = np.random.default_rng(11)
    sizes = np.array([sample_training_mask(4, rng).num_masked for _ in range(100_000)])
    counts = np.bincount(sizes, minlength=5)
    assert counts[0] == 0
    assert stats.chisquare(counts[1:]).pvalue > 0.001


def test_training_mask_size2_subsets():
    rng = np.random.default_rng(12)
    draws = [sample_training_mask(4, rng).masked for _ in range(100_000)]
    subsets = [c for c in itertools.product([False, True], repeat=4) if sum(c) == 2]
    assert len(subsets) == 6
    observed = np.array([sum(d == s for d in draws) for s in subsets])
    # each specific pair: (1/4) * (1/6)
    p = 1 / 24
    n = len(draws)
    assert np.all(np.abs(observed - n * p) < 4 * np.sqrt(n * p * (1 - p)))


def test_anneal_examples():
    cfg = AnnealConfig(512, 0.95)
    assert anneal_rho(0, cfg) == 1.0
    assert anneal_rho(512, cfg) == 0.0
    assert abs(anneal_rho(243, cfg) - (1 - 243 / 486.4)) < 1e-12
    assert anneal_rho(243, cfg) == pytest.approx(0.50041, abs=1e-5)
    with pytest.raises(DomainError):
        anneal_rho(513, cfg)
    with pytest.raises(DomainError):
        AnnealConfig(0, 0.95)
    with pytest.raises(DomainError):
        AnnealConfig(10, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 2000), st.floats(0.01, 1.0))
def test_anneal_endpoints_and_monotone(n_steps, alpha):
    cfg = AnnealConfig(n_steps, alpha)
    rhos = [anneal_rho(n, cfg) for n in range(n_steps + 1)]
    assert rhos[0] == 1.0 and rhos[-1] == 0.0
    assert all(b <= a for a, b in zip(rhos, rhos[1:]))
    assert all(0.0 <= r <= 1.0 for r in rhos)


def test_gibbs_mask_extremes():
    rng = np.random.default_rng(3)
    assert all(sample_gibbs_mask(1.0, 4, rng).masked == (True,) * 4 for _ in range(1000))
    assert all(sample_gibbs_mask(0.0, 4, rng).masked == (False,) * 4 for _ in range(1000))
    with pytest.raises(DomainError):
        sample_gibbs_mask(1.5, 4, rng)


def test_gibbs_mask_half():
    rng = np.random.default_rng(4)
    counts = np.array([sample_gibbs_mask(0.5, 4, rng).num_masked for _ in range(100_000)])
    # binomial(4, 0.5): mean 2, var 1
    assert abs(counts.mean() - 2.0) < 3 * np.sqrt(1.0 / len(counts))


def test_sampling_reproducible():
    a = [sample_training_mask(4, r).masked for r in [np.random.default_rng(5)] for _ in range(50)]
    b = [sample_training_mask(4, r).masked for r in [np.random.default_rng(5)] for _ in range(50)]
    assert a == b
    r1, r2 = np.random.default_rng(6), np.random.default_rng(6)
    assert [sample_gibbs_mask(0.3, 4, r1) for _ in range(50)] == [sample_gibbs_mask(0.3, 4, r2) for _ in range(50)]
