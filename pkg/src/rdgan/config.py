"""Run configuration: one flat `key = value` file covering every tunable.

The format is deliberately plain: one assignment per line, `#` starts a
full-line comment, blank lines ignored. Values round-trip exactly through
format_config/parse_config, so a printed config re-fed as a file reproduces
the run. Unknown and duplicate keys are rejected rather than ignored.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Tuple, get_args, get_origin

from .classifier import HeadConfig
from .data import SyntheticSpec
from .discriminator import D3Config
from .errors import ConfigError
from .generator import RDNConfig
from .trainer import G_LOSS_MODES

PRECISIONS = ("single", "double")


@dataclass(frozen=True)
class RunConfig:
    """Every documented tunable, with desk-scale defaults.

    Model depth is implied by the channel lists: the generator has one
    level per entry of base_channels, the discriminator one block per
    entry of d_channels.
    """

    seed: int = 0
    # arithmetic used by the gradcheck command; training always runs single
    precision: str = "double"

    # synthetic data
    data_dir: str = "data"
    shapes: Tuple[str, ...] = ("square", "circle")
    colors: Tuple[str, ...] = ("red", "blue")
    directions: Tuple[str, ...] = ("left", "right")
    count: int = 2000
    frame_size: int = 32
    timesteps: int = 8
    radius: int = 5
    speed: int = 2

    # generator
    noise_dim: int = 100
    cond_dim: int = 28
    top_hidden_dim: int = 256
    base_channels: Tuple[int, ...] = (64, 32, 16)
    base_size: int = 4
    temporal_kernel: int = 3
    text_raw_dim: int = 64

    # discriminator
    d_channels: Tuple[int, ...] = (16, 32, 64)
    d_alpha: float = 0.2

    # adversarial training
    steps: int = 5000
    batch_size: int = 16
    lr: float = 0.0002
    beta1: float = 0.5
    g_loss: str = "nonsaturating"
    pretrain: bool = True
    pretrain_steps: int = 500
    checkpoint_every: int = 500
    out_dir: str = "runs"

    # classifier head
    head_steps: int = 400
    head_batch_size: int = 32
    head_lr: float = 0.001
    head_dropout: float = 0.5
    holdout_fraction: float = 0.2

    def __post_init__(self):
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {PRECISIONS}, got {self.precision!r}")
        if self.g_loss not in G_LOSS_MODES:
            raise ConfigError(f"g_loss must be one of {G_LOSS_MODES}, got {self.g_loss!r}")
        for key in ("count", "steps", "pretrain_steps", "checkpoint_every"):
            if getattr(self, key) < 0:
                raise ConfigError(f"{key} must be >= 0, got {getattr(self, key)}")
        for key in ("batch_size", "head_steps", "head_batch_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")


def _parse_value(key: str, raw: str, hint) -> object:
    try:
        if hint is int:
            return int(raw)
        if hint is float:
            return float(raw)
        if hint is str:
            return raw
        if hint is bool:
            if raw == "true":
                return True
            if raw == "false":
                return False
            raise ValueError(f"expected true or false, got {raw!r}")
        if get_origin(hint) is tuple:
            item = get_args(hint)[0]
            parts = [p.strip() for p in raw.split(",")] if raw.strip() else []
            return tuple(_parse_value(key, p, item) for p in parts)
    except ValueError as err:
        raise ConfigError(f"config key {key}: {err}") from None
    raise ConfigError(f"config key {key} has unsupported type {hint}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


_STR_TUPLE_KEYS = {"shapes", "colors", "directions"}
_INT_TUPLE_KEYS = {"base_channels", "d_channels"}


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Apply `key = value` lines on top of ``base`` (defaults when None)."""
    base = base if base is not None else RunConfig()
    names = {f.name for f in fields(RunConfig)}
    updates = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"config line {lineno}: expected `key = value`, got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        raw = raw.strip()
        if key not in names:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        if key in updates:
            raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
        if key in _STR_TUPLE_KEYS:
            hint = Tuple[str, ...]
        elif key in _INT_TUPLE_KEYS:
            hint = Tuple[int, ...]
        else:
            current = getattr(base, key)
            hint = bool if isinstance(current, bool) else type(current)
        updates[key] = _parse_value(key, raw, hint)
    return replace(base, **updates)


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: config file not found")
    return parse_config(path.read_text(encoding="utf-8"), base)


def format_config(config: RunConfig) -> str:
    """All keys, all values explicit; parse_config inverts this exactly."""
    lines = []
    for f in fields(RunConfig):
        lines.append(f"{f.name} = {_format_value(getattr(config, f.name))}")
    return "\n".join(lines) + "\n"


def build_model_configs(run: RunConfig) -> tuple[RDNConfig, D3Config]:
    """Model configs implied by the run; rejects inconsistent geometry."""
    g = RDNConfig(
        levels=len(run.base_channels),
        timesteps=run.timesteps,
        noise_dim=run.noise_dim,
        cond_dim=run.cond_dim,
        top_hidden_dim=run.top_hidden_dim,
        base_channels=run.base_channels,
        base_size=run.base_size,
        temporal_kernel=run.temporal_kernel,
        text_raw_dim=run.text_raw_dim,
    )
    if g.frame_size != run.frame_size:
        raise ConfigError(
            f"generator produces {g.frame_size}x{g.frame_size} frames "
            f"(base_size {run.base_size} doubled {g.levels} times) but frame_size is {run.frame_size}"
        )
    d = D3Config(
        blocks=len(run.d_channels),
        channels=run.d_channels,
        alpha=run.d_alpha,
        cond_dim=run.cond_dim,
        timesteps=run.timesteps,
        frame_size=run.frame_size,
        text_raw_dim=run.text_raw_dim,
    )
    return g, d


def synthetic_spec(run: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        shapes=run.shapes,
        colors=run.colors,
        directions=run.directions,
        frame_size=run.frame_size,
        timesteps=run.timesteps,
        radius=run.radius,
        speed=run.speed,
    )


def head_config(run: RunConfig, variant: str, class_count: int, label_fraction: float) -> HeadConfig:
    return HeadConfig(
        variant=variant,
        class_count=class_count,
        label_fraction=label_fraction,
        dropout=run.head_dropout,
        steps=run.head_steps,
        batch_size=run.head_batch_size,
        lr=run.head_lr,
        holdout_fraction=run.holdout_fraction,
    )
