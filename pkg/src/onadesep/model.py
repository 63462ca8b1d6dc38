"""Waveform U-Net separator with optional source conditioning channels.

Encoder layers are strided convolutions followed by a 1x1 gated linear unit,
the bottleneck is a bidirectional LSTM, and the decoder mirrors the encoder
with transposed convolutions and additive skip connections.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .core import ModelInput, SourceSet
from .errors import CheckpointError, ConfigError, NumericalError, ShapeError

DECODER_CONTEXT = 3
CHECKPOINT_MAGIC = "ONADESEP-CHECKPOINT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SeparatorConfig:
    num_sources: int = 4
    depth: int = 4
    base_channels: int = 16
    kernel_size: int = 8
    stride: int = 4
    channel_growth: float = 2.0
    bottleneck_recurrent_layers: int = 1
    conditioned: bool = True

    def __post_init__(self):
        for name in ("num_sources", "depth", "base_channels", "kernel_size", "stride"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.channel_growth < 1:
            raise ConfigError(f"channel_growth must be >= 1, got {self.channel_growth}")
        if self.bottleneck_recurrent_layers < 0:
            raise ConfigError("bottleneck_recurrent_layers must be >= 0")
        if self.kernel_size < self.stride or (self.kernel_size - self.stride) % 2:
            raise ConfigError(
                f"kernel_size - stride must be even and >= 0 (got kernel {self.kernel_size}, "
                f"stride {self.stride}) so every layer maps T to T/stride exactly"
            )

    @property
    def in_channels(self) -> int:
        return 2 * self.num_sources + 1 if self.conditioned else 1

    @property
    def layer_channels(self) -> list[int]:
        return [int(round(self.base_channels * self.channel_growth**i)) for i in range(self.depth)]

    @property
    def length_multiple(self) -> int:
        return self.stride**self.depth

    def valid_length(self, length: int) -> int:
        m = self.length_multiple
        return int(math.ceil(length / m) * m)

    def to_text(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in dataclasses.asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "SeparatorConfig":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        return cls(**_coerce_fields(cls, kv))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce_fields(cls, kv: dict) -> dict:
    out = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, raw in kv.items():
        if key not in known:
            raise ConfigError(f"unknown {cls.__name__} key {key!r}")
        default = known[key].default
        out[key] = _parse_like(default, raw, key)
    return out


def _parse_like(default, raw: str, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return raw.lower() in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {key}={raw!r}") from exc
    return raw


class EncoderLayer(nn.Module):
    def __init__(self, chin, chout, kernel_size, stride):
        super().__init__()
        self.conv = nn.Conv1d(chin, chout, kernel_size, stride, padding=(kernel_size - stride) // 2)
        self.gate = nn.Conv1d(chout, 2 * chout, 1)

    def forward(self, x):
        return F.glu(self.gate(F.relu(self.conv(x))), dim=1)


class DecoderLayer(nn.Module):
    def __init__(self, chin, chout, kernel_size, stride, last=False):
        super().__init__()
        self.gate = nn.Conv1d(chin, 2 * chin, DECODER_CONTEXT, padding=DECODER_CONTEXT // 2)
        self.conv_tr = nn.ConvTranspose1d(chin, chout, kernel_size, stride, padding=(kernel_size - stride) // 2)
        self.last = last

    def forward(self, x):
        x = self.conv_tr(F.glu(self.gate(x), dim=1))
        return x if self.last else F.relu(x)


class Bottleneck(nn.Module):
    def __init__(self, channels, layers):
        super().__init__()
        self.lstm = nn.LSTM(channels, channels, num_layers=layers, bidirectional=True, batch_first=True)
        self.proj = nn.Linear(2 * channels, channels)

    def forward(self, x):
        y, _ = self.lstm(x.transpose(1, 2))
        return self.proj(y).transpose(1, 2)


class Separator(nn.Module):
    def __init__(self, cfg: SeparatorConfig):
        super().__init__()
        self.cfg = cfg
        chans = cfg.layer_channels
        self.encoder = nn.ModuleList()
        self.decoder = nn.ModuleList()
        chin = cfg.in_channels
        for i, ch in enumerate(chans):
            self.encoder.append(EncoderLayer(chin, ch, cfg.kernel_size, cfg.stride))
            chout = chans[i - 1] if i > 0 else cfg.num_sources
            self.decoder.insert(0, DecoderLayer(ch, chout, cfg.kernel_size, cfg.stride, last=i == 0))
            chin = ch
        self.bottleneck = Bottleneck(chans[-1], cfg.bottleneck_recurrent_layers) if cfg.bottleneck_recurrent_layers else None

    def forward(self, x):
        length = x.shape[-1]
        padded = self.cfg.valid_length(length)
        left = (padded - length) // 2
        x = F.pad(x, (left, padded - length - left))
        skips = []
        for enc in self.encoder:
            x = enc(x)
            skips.append(x)
        if self.bottleneck is not None:
            x = self.bottleneck(x)
        for dec in self.decoder:
            x = dec(x + skips.pop())
        return x[..., left : left + length]


@dataclass(eq=False)
class SeparatorState:
    config: SeparatorConfig
    source_order: tuple[str, ...]
    module: Separator = field(repr=False)

    def __post_init__(self):
        self.source_order = tuple(self.source_order)
        if len(self.source_order) != self.config.num_sources:
            raise ConfigError(
                f"source_order has {len(self.source_order)} names for num_sources={self.config.num_sources}"
            )

    @property
    def parameters(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, v.detach().cpu().numpy().copy()) for k, v in self.module.state_dict().items())

    def set_parameters(self, params: dict):
        current = self.module.state_dict()
        missing = set(current) - set(params)
        if missing:
            raise CheckpointError(f"missing parameters: {sorted(missing)}")
        loaded = OrderedDict()
        for name, ref in current.items():
            arr = np.asarray(params[name])
            if tuple(arr.shape) != tuple(ref.shape):
                raise CheckpointError(f"parameter {name} has shape {arr.shape}, expected {tuple(ref.shape)}")
            loaded[name] = torch.as_tensor(arr, dtype=ref.dtype)
        self.module.load_state_dict(loaded)

    @property
    def dtype(self) -> torch.dtype:
        return next(self.module.parameters()).dtype

    def to(self, dtype) -> "SeparatorState":
        """Copy of the state cast to another floating dtype."""
        module = Separator(self.config)
        module.load_state_dict(self.module.state_dict())
        return SeparatorState(self.config, self.source_order, module.to(dtype))


def init_separator(cfg: SeparatorConfig, seed: int, source_order: Sequence[str] | None = None) -> SeparatorState:
    """Build a separator with fan-in scaled uniform weights drawn from a seeded generator."""
    if not isinstance(cfg, SeparatorConfig):
        raise ConfigError("init_separator expects a SeparatorConfig")
    if source_order is None:
        source_order = [f"source{i}" for i in range(cfg.num_sources)]
    module = Separator(cfg)
    gen = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for name, p in module.named_parameters():
            bound = 1.0 / math.sqrt(_fan_in(name, p, module))
            p.copy_(torch.rand(p.shape, generator=gen, dtype=p.dtype) * (2 * bound) - bound)
    return SeparatorState(cfg, tuple(source_order), module)


def _fan_in(name: str, p: torch.Tensor, module: Separator) -> int:
    owner = module.get_submodule(name.rsplit(".", 1)[0])
    if isinstance(owner, nn.LSTM):
        return owner.hidden_size
    if isinstance(owner, nn.ConvTranspose1d):
        return owner.out_channels * owner.kernel_size[0]
    if isinstance(owner, nn.Conv1d):
        return owner.in_channels * owner.kernel_size[0]
    if isinstance(owner, nn.Linear):
        return owner.in_features
    return max(1, p.shape[-1])


def _check_input(state: SeparatorState, channels) -> None:
    if channels.shape[-2] != state.config.in_channels:
        raise ShapeError(
            f"model expects {state.config.in_channels} input channels, got {channels.shape[-2]}"
        )


def separate_batch(state: SeparatorState, channels: np.ndarray) -> np.ndarray:
    """Run the separator on a (B, C, T) array and return (B, I, T) estimates."""
    _check_input(state, channels)
    with torch.no_grad():
        x = torch.as_tensor(np.ascontiguousarray(channels), dtype=state.dtype)
        return state.module(x).numpy()


def forward(state: SeparatorState, model_input: ModelInput | np.ndarray, sample_rate: int = 16000) -> SourceSet:
    channels = model_input.channels if isinstance(model_input, ModelInput) else np.asarray(model_input)
    if channels.ndim != 2:
        raise ShapeError(f"expected a (C, T) input, got shape {channels.shape}")
    out = separate_batch(state, channels[None])[0]
    return SourceSet.from_array(state.source_order, out, sample_rate)


def forward_with_gradients(
    state: SeparatorState,
    model_input: ModelInput | np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray | None,
    loss_fn: Callable,
) -> tuple[float, "OrderedDict[str, np.ndarray]"]:
    """Loss and its gradient with respect to every parameter.

    loss_fn(estimates, targets, mask) receives (I, T) tensors and a bool mask
    tensor (or None) and returns a scalar tensor.
    """
    channels = model_input.channels if isinstance(model_input, ModelInput) else np.asarray(model_input)
    _check_input(state, channels[None])
    module = state.module
    module.zero_grad(set_to_none=True)
    x = torch.as_tensor(np.ascontiguousarray(channels[None]), dtype=state.dtype)
    tgt = torch.as_tensor(np.asarray(targets), dtype=state.dtype)
    est = module(x)[0]
    if est.shape != tgt.shape:
        raise ShapeError(f"estimates {tuple(est.shape)} vs targets {tuple(tgt.shape)}")
    m = None if mask is None else torch.as_tensor(np.asarray(mask, dtype=bool))
    loss = loss_fn(est, tgt, m)
    if not torch.isfinite(loss):
        raise NumericalError("non-finite loss", {"loss": float(loss.detach())})
    loss.backward()
    grads = OrderedDict()
    for name, p in module.named_parameters():
        grads[name] = np.zeros(p.shape) if p.grad is None else p.grad.detach().numpy().copy()
    module.zero_grad(set_to_none=True)
    return float(loss.detach()), grads


# checkpoint container:
#   text header lines terminated by "data\n", then raw little-endian float32
#   arrays in manifest order. The header carries version, config block,
#   source order, manifest, config hash and a hash over header+payload.


def _config_hash(cfg: SeparatorConfig) -> str:
    return hashlib.sha256(cfg.to_text().encode()).hexdigest()


def save_checkpoint(state: SeparatorState, path) -> Path:
    path = Path(path)
    params = state.parameters
    payload = bytearray()
    manifest = []
    for name, arr in params.items():
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest.append(f"{name} {','.join(map(str, arr.shape)) or '-'} {len(payload)} {len(data)}")
        payload += data
    lines = [
        CHECKPOINT_MAGIC,
        f"version={CHECKPOINT_VERSION}",
        "[config]",
        *state.config.to_text().splitlines(),
        "[sources]",
        *state.source_order,
        "[manifest]",
        *manifest,
        f"config_sha256={_config_hash(state.config)}",
    ]
    head = ("\n".join(lines) + "\n").encode()
    digest = hashlib.sha256(head + bytes(payload)).hexdigest()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(f"content_sha256={digest}\ndata\n".encode())
        fh.write(payload)
    return path


def load_checkpoint(path, expect_conditioned: bool | None = None) -> SeparatorState:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    marker = raw.find(b"\ndata\n")
    if not raw.startswith(CHECKPOINT_MAGIC.encode()) or marker < 0:
        raise CheckpointError(f"{path} is not a separator checkpoint")
    header = raw[: marker + 1].decode()
    payload = raw[marker + len(b"\ndata\n") :]
    lines = header.splitlines()
    digest_line = lines.pop()
    if not digest_line.startswith("content_sha256="):
        raise CheckpointError("checkpoint header lacks a content hash")
    head_bytes = ("\n".join(lines) + "\n").encode()

    sections: dict[str, list[str]] = {}
    current = None
    meta = {}
    for line in lines[1:]:
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif line.startswith("config_sha256="):
            meta["config_sha256"] = line.split("=", 1)[1]
        elif current is None:
            k, _, v = line.partition("=")
            meta[k] = v
        else:
            sections[current].append(line)

    if meta.get("version") != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
    try:
        cfg = SeparatorConfig.from_text("\n".join(sections["config"]))
    except KeyError as exc:
        raise CheckpointError("checkpoint has no [config] section") from exc
    if meta.get("config_sha256") != _config_hash(cfg):
        raise CheckpointError("config hash mismatch: header config does not match its recorded hash")
    if hashlib.sha256(head_bytes + payload).hexdigest() != digest_line.split("=", 1)[1]:
        raise CheckpointError("content hash mismatch: checkpoint is corrupted or was modified")
    if expect_conditioned is not None and cfg.conditioned != expect_conditioned:
        kind = "conditioned" if expect_conditioned else "baseline"
        raise ConfigError(f"checkpoint has {cfg.in_channels} input channel(s); a {kind} model is required")

    params = {}
    for entry in sections.get("manifest", []):
        name, shape, offset, nbytes = entry.split(" ")
        dims = () if shape == "-" else tuple(int(s) for s in shape.split(","))
        chunk = payload[int(offset) : int(offset) + int(nbytes)]
        params[name] = np.frombuffer(chunk, dtype="<f4").reshape(dims).astype(np.float32)
    state = SeparatorState(cfg, tuple(sections.get("sources", [])), Separator(cfg))
    state.set_parameters(params)
    return state
