"""Synthetic coordinated-source tracks, stem-directory I/O, and windowing."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile
from scipy.signal import lfilter

from .core import SourceSet, Waveform, mix, rms_db
from .errors import DataError, DomainError

ROLES = ("bass", "chord", "lead", "percussion")

# intervals above the chord root
CHORD_POOL = {
    "maj": (0, 4, 7),
    "min": (0, 3, 7),
    "sus4": (0, 5, 7),
    "maj7": (0, 4, 7, 11),
    "min7": (0, 3, 7, 10),
    "dom7": (0, 4, 7, 10),
}
# (scale degree in semitones, chord quality) for diatonic progressions
DIATONIC = ((0, "maj"), (2, "min"), (4, "min"), (5, "maj"), (7, "dom7"), (9, "min"), (5, "maj7"), (0, "sus4"))

BASS_OCTAVE_MIDI = 36
CHORD_OCTAVE_MIDI = 48
LEAD_OCTAVE_MIDI = 60


@dataclass(frozen=True)
class WindowSpec:
    window_seconds: float = 4.0
    hop_seconds: float = 2.0
    sample_rate: int = 16000
    activity_threshold_db: float = -60.0
    min_active_sources: int = 2

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise DomainError("window_seconds must be positive")
        if not 0 < self.hop_seconds <= self.window_seconds:
            raise DomainError("hop_seconds must lie in (0, window_seconds]")
        if self.min_active_sources < 1:
            raise DomainError("min_active_sources must be >= 1")
        if self.sample_rate <= 0:
            raise DomainError("sample_rate must be positive")

    @property
    def window_samples(self) -> int:
        return int(round(self.window_seconds * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_seconds * self.sample_rate))


@dataclass(frozen=True, eq=False)
class MixtureExample:
    mixture: Waveform
    sources: SourceSet
    track_id: str
    window_start: int

    def __post_init__(self):
        if len(self.mixture) != self.sources.num_samples:
            raise DataError(f"{self.track_id}@{self.window_start}: mixture and sources differ in length")
        err = np.max(np.abs(self.mixture.samples - mix(self.sources).samples))
        if err > 1e-6:
            raise DataError(f"{self.track_id}@{self.window_start}: mixture deviates from sum of sources by {err:g}")


@dataclass(frozen=True)
class SynthConfig:
    num_tracks: int = 20
    track_seconds: float = 12.0
    seed: int = 0
    sample_rate: int = 16000
    tempo_min: float = 90.0
    tempo_max: float = 130.0
    bars_per_chord: int = 1
    progression_length: int = 4
    bass_overtones: int = 10
    chord_overtones: int = 6
    lead_overtones: int = 5
    lead_rest_prob: float = 0.25
    roles: tuple[str, ...] = field(default=ROLES)

    def __post_init__(self):
        if self.num_tracks < 1 or self.track_seconds <= 0:
            raise DomainError("num_tracks and track_seconds must be positive")
        if not 0 < self.tempo_min <= self.tempo_max:
            raise DomainError("tempo range must satisfy 0 < tempo_min <= tempo_max")
        if tuple(self.roles) != ROLES:
            raise DomainError(f"synthetic roles are fixed to {ROLES}")


@dataclass
class Note:
    role: str
    start: float
    duration: float
    midi: int
    velocity: float


@dataclass
class Score:
    """Symbolic content of one generated track, kept for inspection."""

    tempo: float
    key_root: int
    progression: list[tuple[int, str]]
    chord_at_beat: list[tuple[int, str]]
    notes: list[Note]


def midi_to_hz(midi) -> np.ndarray:
    return 440.0 * 2.0 ** ((np.asarray(midi, dtype=np.float64) - 69.0) / 12.0)


def compose(cfg: SynthConfig, rng: np.random.Generator) -> Score:
    tempo = float(rng.uniform(cfg.tempo_min, cfg.tempo_max))
    beat = 60.0 / tempo
    key_root = int(rng.integers(0, 12))
    progression = []
    for _ in range(cfg.progression_length):
        degree, quality = DIATONIC[int(rng.integers(len(DIATONIC)))]
        progression.append(((key_root + degree) % 12, quality))

    n_beats = int(np.ceil(cfg.track_seconds / beat))
    beats_per_chord = 4 * cfg.bars_per_chord
    chord_at_beat = [progression[(b // beats_per_chord) % len(progression)] for b in range(n_beats)]

    notes: list[Note] = []
    for b, (root, quality) in enumerate(chord_at_beat):
        t = b * beat
        notes.append(Note("bass", t, 0.9 * beat, BASS_OCTAVE_MIDI + root, float(rng.uniform(0.8, 1.0))))
        if b % 2 == 0:
            vel = float(rng.uniform(0.6, 0.9))
            for iv in CHORD_POOL[quality]:
                notes.append(Note("chord", t, 1.95 * beat, CHORD_OCTAVE_MIDI + root + iv, vel))
        # lead: eighth-note chord tones an octave above the voicing
        for half in range(2):
            if rng.random() < cfg.lead_rest_prob:
                continue
            iv = CHORD_POOL[quality][int(rng.integers(len(CHORD_POOL[quality])))]
            notes.append(Note("lead", t + half * beat / 2, 0.45 * beat, LEAD_OCTAVE_MIDI + root + iv, float(rng.uniform(0.6, 1.0))))
        for half in range(2):
            notes.append(Note("percussion", t + half * beat / 2, 0.1, 1, float(rng.uniform(0.3, 0.5))))
        if b % 2 == 1:
            notes.append(Note("percussion", t, 0.25, 2, float(rng.uniform(0.7, 1.0))))
        else:
            notes.append(Note("percussion", t, 0.2, 0, float(rng.uniform(0.7, 1.0))))
    return Score(tempo, key_root, progression, chord_at_beat, notes)


def _harmonic_tone(freq, n, sr, overtones, rolloff, decay, attack=0.005):
    t = np.arange(n) / sr
    out = np.zeros(n)
    for k in range(1, overtones + 1):
        if k * freq >= sr / 2:
            break
        out += np.sin(2 * np.pi * k * freq * t) / k**rolloff
    env = np.minimum(1.0, t / attack) * np.exp(-t / decay)
    # short release so notes end without a click
    tail = min(n, int(0.01 * sr))
    env[n - tail :] *= np.linspace(1.0, 0.0, tail)
    return out * env


def _noise_burst(kind, n, sr, rng):
    noise = rng.standard_normal(n)
    t = np.arange(n) / sr
    if kind == 1:  # hat: first difference emphasises highs
        sig = lfilter([1.0, -0.95], [1.0], noise)
        env = np.exp(-t / 0.03)
    elif kind == 2:  # snare: broadband
        sig = noise
        env = np.exp(-t / 0.08)
    else:  # kick: one-pole lowpass noise
        sig = lfilter([0.05], [1.0, -0.95], noise) * 4.0
        env = np.exp(-t / 0.06)
    return sig * env


def render(score: Score, cfg: SynthConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    sr = cfg.sample_rate
    total = int(round(cfg.track_seconds * sr))
    timbre = {
        "bass": (cfg.bass_overtones, float(rng.uniform(0.8, 1.3)), 0.35),
        "chord": (cfg.chord_overtones, float(rng.uniform(1.0, 1.6)), 0.8),
        "lead": (cfg.lead_overtones, float(rng.uniform(0.9, 1.5)), 0.25),
    }
    tracks = {role: np.zeros(total) for role in ROLES}
    for note in score.notes:
        start = int(round(note.start * sr))
        if start >= total:
            continue
        n = min(int(round(note.duration * sr)), total - start)
        if n <= 0:
            continue
        if note.role == "percussion":
            seg = _noise_burst(note.midi, n, sr, rng)
        else:
            overtones, rolloff, decay = timbre[note.role]
            seg = _harmonic_tone(float(midi_to_hz(note.midi)), n, sr, overtones, rolloff, decay)
        tracks[note.role][start : start + n] += note.velocity * seg
    for role in ROLES:
        peak = np.max(np.abs(tracks[role]))
        if peak > 0:
            tracks[role] *= 10 ** (rng.uniform(-4.0, 2.0) / 20) / peak
    return tracks


def synth_generate(cfg: SynthConfig, return_scores: bool = False):
    """Generate `num_tracks` four-source tracks; deterministic in cfg.seed."""
    out = []
    scores = []
    for i in range(cfg.num_tracks):
        rng = np.random.default_rng([cfg.seed, i])
        score = compose(cfg, rng)
        stems = render(score, cfg, rng)
        arr = np.stack([stems[r] for r in ROLES])
        peak = np.max(np.abs(arr.sum(axis=0)))
        arr = (arr * (0.9 / peak if peak > 0 else 1.0)).astype(np.float32)
        # float32 rounding of the sum can creep past the limit
        while np.max(np.abs(arr.sum(axis=0, dtype=np.float32))) > 1.0:
            arr *= np.float32(0.999)
        out.append((f"track{i:04d}", SourceSet.from_array(ROLES, arr, cfg.sample_rate)))
        scores.append(score)
    return (out, scores) if return_scores else out


def window_track(sources: SourceSet, spec: WindowSpec, track_id: str = "track") -> list[MixtureExample]:
    if sources.sample_rate != spec.sample_rate:
        raise DataError(
            f"{track_id}: sources are at {sources.sample_rate} Hz but the window spec expects {spec.sample_rate} Hz"
        )
    win, hop = spec.window_samples, spec.hop_samples
    arr = sources.to_array()
    examples = []
    for start in range(0, sources.num_samples - win + 1, hop):
        seg = arr[:, start : start + win]
        active = sum(rms_db(row) > spec.activity_threshold_db for row in seg)
        if active < spec.min_active_sources:
            continue
        window = SourceSet.from_array(sources.names, seg, sources.sample_rate)
        examples.append(MixtureExample(mix(window), window, track_id, start))
    return examples


def window_dataset(tracks, spec: WindowSpec) -> list[MixtureExample]:
    examples = []
    for track_id, sources in tracks:
        examples.extend(window_track(sources, spec, track_id))
    return examples


_STEM_RE = re.compile(r"^(\d{2})_(.+)\.wav$")


def save_stem_dataset(tracks, root, overwrite: bool = False) -> Path:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rates = {s.sample_rate for _, s in tracks}
    names = {tuple(s.names) for _, s in tracks}
    if len(rates) > 1:
        raise DataError(f"tracks use several sample rates: {sorted(rates)}")
    for track_id, sources in tracks:
        tdir = root / track_id
        tdir.mkdir(exist_ok=True)
        for idx, (name, w) in enumerate(sources):
            target = tdir / f"{idx:02d}_{name}.wav"
            if target.exists() and not overwrite:
                raise DataError(f"{target} exists")
            wavfile.write(target, w.sample_rate, np.asarray(w.samples, dtype=np.float32))
    meta = {"sample_rate": rates.pop() if rates else ""}
    if len(names) == 1:
        meta["sources"] = ",".join(names.pop())
    (root / "dataset.meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()))
    return root


def _read_meta(root: Path) -> dict:
    path = root / "dataset.meta"
    if not path.exists():
        return {}
    return dict(line.split("=", 1) for line in path.read_text().splitlines() if "=" in line)


def read_wav(path, expected_rate: int | None = None) -> Waveform:
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except (ValueError, OSError) as exc:
        raise DataError(f"{path}: unsupported or unreadable WAV ({exc})") from exc
    if data.ndim != 1:
        raise DataError(f"{path}: expected mono audio, found {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise DataError(f"{path}: unsupported sample format {data.dtype} (use 16-bit PCM or 32-bit float)")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz; resample the stems beforehand")
    return Waveform(samples, rate)


def write_wav(path, waveform: Waveform) -> None:
    wavfile.write(Path(path), waveform.sample_rate, np.asarray(waveform.samples, dtype=np.float32))


def load_stem_dataset(root, sample_rate: int | None = None) -> list[tuple[str, SourceSet]]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset root {root} does not exist")
    meta = _read_meta(root)
    if sample_rate is None and meta.get("sample_rate"):
        sample_rate = int(meta["sample_rate"])
    expected_names = tuple(meta["sources"].split(",")) if meta.get("sources") else None

    tracks = []
    for tdir in sorted(p for p in root.iterdir() if p.is_dir()):
        stems = []
        for f in sorted(tdir.iterdir()):
            m = _STEM_RE.match(f.name)
            if m is None:
                if f.suffix.lower() == ".wav":
                    raise DataError(f"{f}: stem files must be named <nn>_<source>.wav")
                continue
            stems.append((m.group(2), f))
        names = tuple(n for n, _ in stems)
        if expected_names is None:
            expected_names = names
        if names != expected_names:
            missing = sorted(set(expected_names) - set(names))
            detail = f"missing stem(s) {missing}" if missing else f"stems {list(names)} differ from {list(expected_names)}"
            raise DataError(f"{tdir}: {detail}")
        waves = [read_wav(f, sample_rate) for _, f in stems]
        lengths = {len(w) for w in waves}
        if len(lengths) > 1:
            bad = [str(f) for (_, f), w in zip(stems, waves) if len(w) != len(waves[0])]
            raise DataError(f"{tdir}: stem lengths differ ({sorted(lengths)}), offending file(s): {bad}")
        rates = {w.sample_rate for w in waves}
        if sample_rate is None:
            sample_rate = rates.pop()
        tracks.append((tdir.name, SourceSet(names, tuple(waves))))
    if not tracks:
        raise DataError(f"no track directories found under {root}")
    return tracks


def split_tracks(tracks: Sequence, num_eval: int):
    """Last `num_eval` tracks form the evaluation split."""
    if not 0 < num_eval < len(tracks):
        raise DataError(f"cannot hold out {num_eval} of {len(tracks)} tracks")
    return list(tracks[:-num_eval]), list(tracks[-num_eval:])

