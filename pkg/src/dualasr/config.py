"""Training configuration and its flat ``key = value`` file format.

Example file::

    # desk-scale run
    epochs = 30
    batch_size = 20
    enc_blocks = 2
    speed_factors = 0.9,1.0,1.1

Blank lines and ``#`` comments are ignored. Tuple-valued keys take
comma-separated values; ``none`` clears an optional value.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass
from pathlib import Path

from .decode import BeamConfig
from .encoder import EncoderConfig
from .frontend import SpecAugmentPolicy
from .losses import LossWeights
from .model import ModelConfig


@dataclass
class TrainConfig:
    # multi-task weights
    alpha: float = 0.3
    beta: float = 0.5
    gamma: float = 0.5
    pi: float = 10.0
    # optimisation
    lr: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    plateau_factor: float = 0.5
    plateau_patience: int = 1
    epochs: int = 30
    batch_size: int = 20
    grad_clip: float = 5.0
    seed: int = 0
    # stop once the epoch-mean training total falls below this
    stop_train_loss: float | None = None
    # encoder
    enc_blocks: int = 2
    attn_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    depthwise_kernel: int = 15
    block_kind: str = "conformer"
    dropout: float = 0.1
    # decoders / LID
    grp_layers: int = 2
    phn_layers: int = 1
    dec_ffn: int = 256
    lid_hidden: tuple[int, ...] = (128, 64)
    # augmentation
    speed_factors: tuple[float, ...] = (0.9, 1.0, 1.1)
    spec_augment: bool = True
    freq_masks: int = 2
    freq_width: int = 10
    time_masks: int = 2
    time_width: int = 40
    # decoding
    lm_weight: float = 1.4
    beam_size: int = 20
    lm_order: int = 3

    def __post_init__(self):
        for name in ("lr", "epochs", "batch_size", "grad_clip", "attn_dim", "heads", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.plateau_factor < 1:
            raise ValueError("plateau_factor must lie in (0, 1)")
        self.weights()  # validates non-negativity
        self.lid_hidden = tuple(int(v) for v in self.lid_hidden)
        self.speed_factors = tuple(float(v) for v in self.speed_factors)
        if any(f <= 0 for f in self.speed_factors):
            raise ValueError("speed factors must be positive")

    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.pi)

    def model_config(self, grapheme_vocab_size: int, phoneme_vocab_size: int) -> ModelConfig:
        enc = EncoderConfig(
            num_blocks=self.enc_blocks,
            attn_dim=self.attn_dim,
            num_heads=self.heads,
            ffn_dim=self.ffn_dim,
            depthwise_kernel=self.depthwise_kernel,
            dropout=self.dropout,
            block_kind=self.block_kind,
        )
        return ModelConfig(
            encoder=enc,
            grp_layers=self.grp_layers,
            phn_layers=self.phn_layers,
            decoder_heads=self.heads,
            decoder_ffn=self.dec_ffn,
            decoder_dropout=self.dropout,
            grapheme_vocab_size=grapheme_vocab_size,
            phoneme_vocab_size=phoneme_vocab_size,
            lid_hidden=self.lid_hidden,
        )

    def policy(self) -> SpecAugmentPolicy | None:
        if not self.spec_augment:
            return None
        return SpecAugmentPolicy(self.freq_masks, self.freq_width, self.time_masks, self.time_width)

    def beam(self) -> BeamConfig:
        return BeamConfig(self.beam_size, self.lm_weight)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


def _coerce(name: str, raw: str, hint) -> object:
    raw = raw.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if type(None) in args:
        if raw.lower() in ("none", ""):
            return None
        hint = next(a for a in args if a is not type(None))
        origin, args = typing.get_origin(hint), typing.get_args(hint)
    if origin is tuple:
        return tuple(_coerce(name, part, args[0]) for part in raw.split(",") if part.strip())
    if hint is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return hint(raw)
    except ValueError:
        raise ValueError(f"{name}: cannot parse {raw!r} as {hint.__name__}") from None


def parse_overrides(
    pairs: typing.Iterable[tuple[str, str]], base: TrainConfig | None = None
) -> TrainConfig:
    base = base or TrainConfig()
    hints = typing.get_type_hints(TrainConfig)
    changes = {}
    for key, value in pairs:
        key = key.strip()
        if key not in hints:
            raise KeyError(f"unknown config key {key!r}")
        changes[key] = _coerce(key, value, hints[key])
    return dataclasses.replace(base, **changes)


def parse_config_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    pairs = []
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        pairs.append((key, value))
    return parse_overrides(pairs, base)


def load_config(path: str | Path | None, overrides: typing.Iterable[str] = ()) -> TrainConfig:
    cfg = parse_config_text(Path(path).read_text()) if path else TrainConfig()
    pairs = []
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not key=value")
        pairs.append(tuple(item.split("=", 1)))
    return parse_overrides(pairs, cfg)


def dump_config(cfg: TrainConfig) -> str:
    lines = []
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif v is None:
            v = "none"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
