"""Video discriminator: a 3D-CNN scoring (video, condition) pairs.

Stacked blocks of {conv3d 3x3x3 stride 1 pad 1, batchnorm, leaky relu,
2x2x2 max-pool} halve every extent; after the last block the projected
sentence condition is tiled over the remaining positions and concatenated
along channels, and one full-extent 3D convolution collapses everything to
a single logit. There are no fully-connected layers: every video-path
weight is a conv kernel.

The 2D functions at the bottom are the single-frame analog used while
pretraining the spatial stage of the generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError, UsageError
from .ops import RunningStats, batchnorm, conv2d, conv3d, leaky_relu, maxpool2d, maxpool3d, sigmoid
from .rng import Rng
from .tensor import ParameterSet, Tensor, broadcast, concat_channels, reshape

INIT_STD = 0.02

# One block applies exactly these, in order.
BLOCK_OPS = ("conv3d", "batchnorm", "leaky_relu", "maxpool3d")


@dataclass
class D3Config:
    blocks: int = 4
    channels: tuple = (64, 128, 256, 512)
    alpha: float = 0.2
    cond_dim: int = 28
    in_channels: int = 3
    timesteps: int = 16
    frame_size: int = 64
    text_raw_dim: int = 64

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.blocks < 1:
            raise ConfigError(f"blocks must be >= 1, got {self.blocks}")
        if len(self.channels) != self.blocks:
            raise ConfigError(f"channels has {len(self.channels)} entries for {self.blocks} blocks")
        if any(c <= 0 for c in self.channels):
            raise ConfigError(f"channel counts must be positive, got {self.channels}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"leaky slope must be in (0,1), got {self.alpha}")
        if self.cond_dim < 0:
            raise ConfigError(f"cond_dim must be >= 0, got {self.cond_dim}")
        factor = 2**self.blocks
        if self.frame_size % factor or self.frame_size < factor:
            raise ConfigError(f"frame_size {self.frame_size} does not survive {self.blocks} halvings")
        if self.timesteps % factor or self.timesteps < factor:
            raise ConfigError(f"timesteps {self.timesteps} does not survive {self.blocks} halvings")

    @property
    def final_spatial(self) -> int:
        return self.frame_size // 2**self.blocks

    @property
    def final_temporal(self) -> int:
        return self.timesteps // 2**self.blocks


def _add_bn(params: ParameterSet, prefix: str, channels: int, dtype) -> None:
    params.add(f"{prefix}/gamma", Tensor(np.ones(channels, dtype=dtype), requires_grad=True))
    params.add(f"{prefix}/beta", Tensor(np.zeros(channels, dtype=dtype), requires_grad=True))
    params.add(f"{prefix}/running_mean", Tensor(np.zeros(channels, dtype=dtype)))
    params.add(f"{prefix}/running_var", Tensor(np.ones(channels, dtype=dtype)))


def _bn(params: ParameterSet, prefix: str, x: Tensor, mode: str) -> Tensor:
    stats = RunningStats(mean=params[f"{prefix}/running_mean"], var=params[f"{prefix}/running_var"])
    return batchnorm(x, params[f"{prefix}/gamma"], params[f"{prefix}/beta"], mode, stats)


def init_discriminator(config: D3Config, rng: Rng, dtype=np.float32) -> ParameterSet:
    """Fresh weights N(0, 0.02^2); batchnorm gamma=1, beta=0."""

    def gauss(shape):
        return Tensor(rng.normal(shape, std=INIT_STD, dtype=dtype), requires_grad=True)

    p = ParameterSet()
    if config.cond_dim > 0:
        p.add("d/proj/W", gauss((config.cond_dim, config.text_raw_dim)))
    prev = config.in_channels
    for i, ci in enumerate(config.channels, start=1):
        p.add(f"d/block{i}/K", gauss((ci, prev, 3, 3, 3)))
        _add_bn(p, f"d/block{i}/bn", ci, dtype)
        prev = ci
    p.add("d/final/K", gauss((1, prev + config.cond_dim, config.final_temporal, config.final_spatial, config.final_spatial)))
    return p


def tile_condition(cond: Tensor, temporal_extent: int, spatial_extent: int) -> Tensor:
    """Repeat each condition vector over all (t, y, x) positions.

    (N, C) -> (N, C, T', S, S); a bare (C,) vector -> (C, T', S, S).
    Backward sums over the tiled positions.
    """
    if temporal_extent < 1 or spatial_extent < 1:
        raise UsageError(f"extents must be >= 1, got ({temporal_extent}, {spatial_extent})")
    if cond.ndim == 1:
        body = reshape(cond, (cond.shape[0], 1, 1, 1))
        return broadcast(body, (cond.shape[0], temporal_extent, spatial_extent, spatial_extent))
    if cond.ndim == 2:
        body = reshape(cond, (cond.shape[0], cond.shape[1], 1, 1, 1))
        return broadcast(body, (cond.shape[0], cond.shape[1], temporal_extent, spatial_extent, spatial_extent))
    raise ShapeError(f"condition must be rank 1 or 2, got {tuple(cond.shape)}")


def _video_trunk(params: ParameterSet, config: D3Config, video: Tensor, mode: str) -> Tensor:
    if video.ndim != 5:
        raise ShapeError(f"video must be rank 5, got {tuple(video.shape)}")
    n = video.shape[0]
    want = (n, config.in_channels, config.timesteps, config.frame_size, config.frame_size)
    if tuple(video.shape) != want:
        raise ShapeError(f"video extents {tuple(video.shape)} do not match config {want}")
    h = video
    for i in range(1, config.blocks + 1):
        h = conv3d(h, params[f"d/block{i}/K"], stride=1, pad=1)
        h = _bn(params, f"d/block{i}/bn", h, mode)
        h = leaky_relu(h, config.alpha)
        h = maxpool3d(h)
    return h


def extract_features(params: ParameterSet, config: D3Config, video: Tensor, mode: str = "eval") -> Tensor:
    """Penultimate maps (N, C, T', S, S), before any condition enters."""
    return _video_trunk(params, config, video, mode)


def disc_forward(params: ParameterSet, config: D3Config, video: Tensor, cond: Tensor | None = None, mode: str = "train") -> Tensor:
    """Scores in (0,1), shape (N,). ``cond`` is the projected (N, cond_dim)."""
    h = _video_trunk(params, config, video, mode)
    if config.cond_dim > 0:
        if cond is None:
            raise UsageError("this config is conditional: a condition tensor is required")
        if cond.ndim != 2 or cond.shape != (video.shape[0], config.cond_dim):
            raise ShapeError(f"condition must be ({video.shape[0]}, {config.cond_dim}), got {tuple(cond.shape)}")
        tiled = tile_condition(cond, config.final_temporal, config.final_spatial)
        h = concat_channels(h, tiled)
    elif cond is not None and cond.size > 0:
        raise ShapeError(f"cond_dim is 0 but a condition of shape {tuple(cond.shape)} was given")
    logit = conv3d(h, params["d/final/K"], stride=1, pad=0)
    return sigmoid(reshape(logit, (video.shape[0],)))


def init_image_discriminator(config: D3Config, rng: Rng, dtype=np.float32) -> ParameterSet:
    """2D analog for the image-pretraining phase; same widths and paths."""

    def gauss(shape):
        return Tensor(rng.normal(shape, std=INIT_STD, dtype=dtype), requires_grad=True)

    p = ParameterSet()
    if config.cond_dim > 0:
        p.add("d/proj/W", gauss((config.cond_dim, config.text_raw_dim)))
    prev = config.in_channels
    for i, ci in enumerate(config.channels, start=1):
        p.add(f"d/block{i}/K", gauss((ci, prev, 3, 3)))
        _add_bn(p, f"d/block{i}/bn", ci, dtype)
        prev = ci
    p.add("d/final/K", gauss((1, prev + config.cond_dim, config.final_spatial, config.final_spatial)))
    return p


def image_disc_forward(params: ParameterSet, config: D3Config, frames: Tensor, cond: Tensor | None = None, mode: str = "train") -> Tensor:
    """Single-frame scores in (0,1) from (N, C, H, W)."""
    n = frames.shape[0]
    want = (n, config.in_channels, config.frame_size, config.frame_size)
    if tuple(frames.shape) != want:
        raise ShapeError(f"frame extents {tuple(frames.shape)} do not match config {want}")
    h = frames
    for i in range(1, config.blocks + 1):
        h = conv2d(h, params[f"d/block{i}/K"], stride=1, pad=1)
        h = _bn(params, f"d/block{i}/bn", h, mode)
        h = leaky_relu(h, config.alpha)
        h = maxpool2d(h)
    if config.cond_dim > 0:
        if cond is None:
            raise UsageError("this config is conditional: a condition tensor is required")
        if cond.ndim != 2 or cond.shape != (n, config.cond_dim):
            raise ShapeError(f"condition must be ({n}, {config.cond_dim}), got {tuple(cond.shape)}")
        s = config.final_spatial
        body = reshape(cond, (n, config.cond_dim, 1, 1))
        h = concat_channels(h, broadcast(body, (n, config.cond_dim, s, s)))
    logit = conv2d(h, params["d/final/K"], stride=1, pad=0)
    return sigmoid(reshape(logit, (n,)))
