import numpy as np
import pytest
import torch

from onadesep.core import SourceSet
from onadesep.data import MixtureExample, SynthConfig, WindowSpec, synth_generate, window_track
from onadesep.core import mix


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_example(arr, names=None, sr=16000, track_id="t", start=0):
    names = names or [f"s{i}" for i in range(len(arr))]
    sources = SourceSet.from_array(names, np.asarray(arr, dtype=np.float32), sr)
    return MixtureExample(mix(sources), sources, track_id, start)


@pytest.fixture(scope="session")
def short_windows():
    tracks = synth_generate(SynthConfig(num_tracks=2, track_seconds=2.0, seed=7))
    spec = WindowSpec(window_seconds=0.256, hop_seconds=0.256)
    out = []
    for tid, s in tracks:
        out.extend(window_track(s, spec, tid))
    return out


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
