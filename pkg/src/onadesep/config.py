"""Flat key=value run configuration and seed derivation.

Keys carry a section prefix, e.g. ``train.learning_rate=3e-4``. The single
top-level key ``seed`` drives every subordinate seed through
``derive_seed(seed, purpose)``, a SHA-256 of ``"<seed>:<purpose>"`` truncated
to 63 bits.
"""

from __future__ import annotations

import dataclasses
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .data import SynthConfig, WindowSpec
from .errors import ConfigError
from .model import SeparatorConfig, _parse_like
from .sampler import GibbsConfig
from .training import TrainConfig

SEED_ENV = "ONADESEP_SEED"

# section -> (config class, fields that are not user-settable there)
_SECTIONS = {
    "synth": (SynthConfig, {"seed", "roles", "sample_rate"}),
    "window": (WindowSpec, set()),
    "model": (SeparatorConfig, {"num_sources", "conditioned"}),
    "train": (TrainConfig, {"mode", "seed"}),
    "gibbs": (GibbsConfig, {"seed", "record_trajectory"}),
}


@dataclass(frozen=True)
class EvalSettings:
    num_eval_tracks: int = 10
    grid: str = "1,4,16,64,128,256,512"
    batch_size: int = 16

    @property
    def steps_grid(self) -> tuple[int, ...]:
        try:
            grid = tuple(int(s) for s in self.grid.split(",") if s.strip())
        except ValueError as exc:
            raise ConfigError(f"bad eval.grid {self.grid!r}") from exc
        if not grid or min(grid) < 1:
            raise ConfigError("eval.grid needs positive step counts")
        return grid


@dataclass
class RunConfig:
    seed: int = 0
    values: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        prefix = name + "."
        return {k[len(prefix):]: v for k, v in self.values.items() if k.startswith(prefix)}

    def synth(self) -> SynthConfig:
        return SynthConfig(seed=derive_seed(self.seed, "synth"), **self.section("synth"))

    def window(self) -> WindowSpec:
        return WindowSpec(**self.section("window"))

    def model(self, num_sources: int, conditioned: bool) -> SeparatorConfig:
        return SeparatorConfig(num_sources=num_sources, conditioned=conditioned, **self.section("model"))

    def train(self, mode: str) -> TrainConfig:
        return TrainConfig(mode=mode, seed=derive_seed(self.seed, f"train:{mode}"), **self.section("train"))

    def gibbs(self) -> GibbsConfig:
        return GibbsConfig(seed=derive_seed(self.seed, "gibbs"), **self.section("gibbs"))

    def eval(self) -> EvalSettings:
        return EvalSettings(**self.section("eval"))

    def resolved_text(self) -> str:
        """Every key with its effective value, defaults included."""
        lines = [f"seed={self.seed}"]
        for name, (cls, hidden) in {**_SECTIONS, "eval": (EvalSettings, set())}.items():
            for f in dataclasses.fields(cls):
                if f.name in hidden:
                    continue
                value = self.values.get(f"{name}.{f.name}", f.default)
                lines.append(f"{name}.{f.name}={_render(value)}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run_config.txt").write_text(self.resolved_text())
        (out_dir / "VERSION").write_text(f"onadesep {__version__}\n")


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def derive_seed(seed: int, purpose: str) -> int:
    digest = hashlib.sha256(f"{int(seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def _field_default(section: str, key: str):
    if section == "eval":
        cls, hidden = EvalSettings, set()
    elif section in _SECTIONS:
        cls, hidden = _SECTIONS[section]
    else:
        raise ConfigError(f"unknown config section {section!r}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    if key not in fields or key in hidden:
        raise ConfigError(f"unknown config key {section}.{key}")
    return fields[key].default


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key == "seed":
            cfg.seed = _parse_like(0, value, key)
            continue
        section, _, name = key.partition(".")
        default = _field_default(section, name)
        cfg.values[key] = _parse_like(default, value, key)
    return cfg


def load_config(path=None) -> RunConfig:
    cfg = parse_config(Path(path).read_text()) if path else RunConfig()
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            cfg.seed = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return cfg
