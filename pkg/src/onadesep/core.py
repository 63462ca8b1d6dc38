"""Signal containers, mixing, and model-input assembly."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AlignmentError, DomainError

FILL_VALUE = 0.0
MASKED_FLAG = 1.0
UNMASKED_FLAG = 0.0
SILENCE_DB = -200.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono audio signal."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1:
            raise DomainError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise DomainError("waveform must contain at least one sample")
        if not np.issubdtype(samples.dtype, np.floating):
            samples = samples.astype(np.float64)
        if not np.all(np.isfinite(samples)):
            raise DomainError("waveform contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise DomainError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True, eq=False)
class SourceSet:
    """Ordered, named, length-aligned collection of source waveforms."""

    names: tuple[str, ...]
    waveforms: tuple[Waveform, ...]

    def __post_init__(self):
        names = tuple(self.names)
        waveforms = tuple(self.waveforms)
        if not names:
            raise DomainError("a SourceSet needs at least one source")
        if len(names) != len(waveforms):
            raise AlignmentError(f"{len(names)} names for {len(waveforms)} waveforms")
        if len(set(names)) != len(names):
            raise DomainError(f"source names must be unique: {names}")
        first = waveforms[0]
        for name, w in zip(names, waveforms):
            if len(w) != len(first) or w.sample_rate != first.sample_rate:
                raise AlignmentError(
                    f"source {name!r} has length {len(w)} @ {w.sample_rate} Hz, "
                    f"expected {len(first)} @ {first.sample_rate} Hz"
                )
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "waveforms", waveforms)

    @classmethod
    def from_array(cls, names: Sequence[str], array, sample_rate: int) -> "SourceSet":
        array = np.asarray(array)
        if array.ndim != 2 or array.shape[0] != len(names):
            raise AlignmentError(f"expected ({len(names)}, T) array, got {array.shape}")
        return cls(tuple(names), tuple(Waveform(row, sample_rate) for row in array))

    def __len__(self):
        return len(self.names)

    def __getitem__(self, key) -> Waveform:
        if isinstance(key, str):
            return self.waveforms[self.names.index(key)]
        return self.waveforms[key]

    def __iter__(self):
        return iter(zip(self.names, self.waveforms))

    @property
    def num_samples(self) -> int:
        return len(self.waveforms[0])

    @property
    def sample_rate(self) -> int:
        return self.waveforms[0].sample_rate

    def to_array(self, dtype=None) -> np.ndarray:
        """Stack into an (I, T) array."""
        return np.stack([w.samples for w in self.waveforms]).astype(dtype or self.waveforms[0].samples.dtype, copy=False)

    def replace(self, index: int, waveform: Waveform) -> "SourceSet":
        waveforms = list(self.waveforms)
        waveforms[index] = waveform
        return SourceSet(self.names, tuple(waveforms))


@dataclass(frozen=True)
class MaskVector:
    """Which sources are hidden from the model (True) versus given as conditioning (False)."""

    masked: tuple[bool, ...]

    def __post_init__(self):
        object.__setattr__(self, "masked", tuple(bool(m) for m in self.masked))

    @classmethod
    def all_masked(cls, num_sources: int) -> "MaskVector":
        return cls((True,) * num_sources)

    def __len__(self):
        return len(self.masked)

    def __getitem__(self, i) -> bool:
        return self.masked[i]

    @property
    def num_masked(self) -> int:
        return sum(self.masked)

    @property
    def bits(self) -> str:
        return "".join("1" if m else "0" for m in self.masked)

    def as_array(self) -> np.ndarray:
        return np.array(self.masked, dtype=bool)


@dataclass(frozen=True, eq=False)
class ModelInput:
    """(2I+1, T) channel stack: mixture, conditioning sources, sentinel flags."""

    channels: np.ndarray
    num_sources: int

    @property
    def mixture(self) -> np.ndarray:
        return self.channels[0]

    @property
    def conditioning(self) -> np.ndarray:
        return self.channels[1 : self.num_sources + 1]

    @property
    def flags(self) -> np.ndarray:
        return self.channels[self.num_sources + 1 :]

    @property
    def num_samples(self) -> int:
        return self.channels.shape[1]


def _check_aligned(waveforms: Iterable[Waveform]):
    waveforms = list(waveforms)
    ref = waveforms[0]
    for w in waveforms[1:]:
        if len(w) != len(ref) or w.sample_rate != ref.sample_rate:
            raise AlignmentError(
                f"length/sample-rate mismatch: {len(w)} @ {w.sample_rate} vs {len(ref)} @ {ref.sample_rate}"
            )


def mix(sources: SourceSet) -> Waveform:
    _check_aligned(sources.waveforms)
    total = np.sum(np.stack([w.samples for w in sources.waveforms]), axis=0)
    return Waveform(total, sources.sample_rate)


def assemble_channels(mixture: np.ndarray, conditioning: np.ndarray, masked: np.ndarray) -> np.ndarray:
    """Array-level input assembly; works on a single example or a leading batch axis.

    mixture is (..., T), conditioning (..., I, T), masked (..., I) bool.
    """
    masked = np.asarray(masked, dtype=bool)
    keep = ~masked[..., None]
    cond = np.where(keep, conditioning, np.asarray(FILL_VALUE, dtype=conditioning.dtype))
    flags = np.where(keep, UNMASKED_FLAG, MASKED_FLAG).astype(conditioning.dtype)
    flags = np.broadcast_to(flags, cond.shape)
    return np.concatenate([mixture[..., None, :], cond, flags], axis=-2)


def assemble_model_input(mixture: Waveform, conditioning: SourceSet, mask: MaskVector) -> ModelInput:
    if len(mask) != len(conditioning):
        raise AlignmentError(f"mask has {len(mask)} entries for {len(conditioning)} sources")
    _check_aligned([mixture, *conditioning.waveforms])
    dtype = np.result_type(mixture.samples.dtype, *(w.samples.dtype for w in conditioning.waveforms))
    channels = assemble_channels(
        mixture.samples.astype(dtype, copy=False),
        conditioning.to_array(dtype),
        mask.as_array(),
    )
    return ModelInput(channels, len(conditioning))


def rms_db(w: Waveform | np.ndarray) -> float:
    """RMS level in dBFS; silence maps to SILENCE_DB instead of -inf."""
    samples = w.samples if isinstance(w, Waveform) else np.asarray(w)
    if samples.size == 0:
        raise DomainError("rms_db of an empty waveform")
    power = float(np.mean(np.square(samples, dtype=np.float64)))
    if power <= 0.0:
        return SILENCE_DB
    return max(SILENCE_DB, 10.0 * np.log10(power))
