"""Recurrent deconvolutional generator: a (level x timestep) lattice.

Within a timestep, strided deconvolutions double the spatial extent level
by level; between timesteps, size-preserving convolutions carry each
level's state forward. Every level's kernels are shared across time, so
parameter count is independent of video length. A small 1D recurrence at
the top feeds the lattice: the input vector enters once, at t=1, and later
seed vectors come from the recurrence.

Cell rule, with a = relu and b = batchnorm:

    H[i][t] = a(b( up(H[i-1][t]) + across(H[i][t-1]) + B_i ))

where up is the level's deconvolution (the seed projection at i=1), the
across term is dropped at t=1 (zero initial state), and B_i is a
per-channel bias. Frames come off the top level through a final
deconvolution and tanh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError, UsageError
from .ops import RunningStats, batchnorm, conv2d, deconv2d, linear, relu, tanh
from .rng import Rng
from .tensor import ParameterSet, Tensor, concat_channels, reshape, stack

INIT_STD = 0.02


@dataclass
class RDNConfig:
    levels: int = 4
    timesteps: int = 16
    noise_dim: int = 100
    cond_dim: int = 28
    top_hidden_dim: int = 256
    base_channels: tuple = (256, 128, 64, 32)
    base_size: int = 4
    out_channels: int = 3
    temporal_kernel: int = 3
    output_activation: str = "tanh"
    text_raw_dim: int = 64

    def __post_init__(self):
        self.base_channels = tuple(int(c) for c in self.base_channels)
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if len(self.base_channels) != self.levels:
            raise ConfigError(f"base_channels has {len(self.base_channels)} entries for {self.levels} levels")
        if any(c <= 0 for c in self.base_channels):
            raise ConfigError(f"channel counts must be positive, got {self.base_channels}")
        if self.temporal_kernel % 2 == 0 or self.temporal_kernel < 1:
            raise ConfigError(f"temporal_kernel must be odd and positive, got {self.temporal_kernel}")
        if self.timesteps < 1:
            raise ConfigError(f"timesteps must be >= 1, got {self.timesteps}")
        if self.noise_dim < 1:
            raise ConfigError(f"noise_dim must be >= 1, got {self.noise_dim}")
        if self.cond_dim < 0:
            raise ConfigError(f"cond_dim must be >= 0, got {self.cond_dim}")
        if self.output_activation != "tanh":
            raise ConfigError(f"unsupported output_activation {self.output_activation!r}")

    @property
    def frame_size(self) -> int:
        return self.base_size * 2**self.levels

    @property
    def input_dim(self) -> int:
        return self.noise_dim + self.cond_dim

    def level_size(self, i: int) -> int:
        return self.base_size * 2 ** (i - 1)


def _add_bn(params: ParameterSet, prefix: str, channels: int, dtype) -> None:
    params.add(f"{prefix}/gamma", Tensor(np.ones(channels, dtype=dtype), requires_grad=True))
    params.add(f"{prefix}/beta", Tensor(np.zeros(channels, dtype=dtype), requires_grad=True))
    params.add(f"{prefix}/running_mean", Tensor(np.zeros(channels, dtype=dtype)))
    params.add(f"{prefix}/running_var", Tensor(np.ones(channels, dtype=dtype)))


def _bn(params: ParameterSet, prefix: str, x: Tensor, mode: str) -> Tensor:
    stats = RunningStats(mean=params[f"{prefix}/running_mean"], var=params[f"{prefix}/running_var"])
    return batchnorm(x, params[f"{prefix}/gamma"], params[f"{prefix}/beta"], mode, stats)


def init_rdn(config: RDNConfig, rng: Rng, dtype=np.float32, include_temporal: bool = True) -> ParameterSet:
    """Fresh generator parameters, Gaussian N(0, 0.02^2) except batchnorm.

    With include_temporal=False the result is the spatial subset (no
    recurrence R, no temporal kernels U_i): exactly the image generator.
    """

    def gauss(shape):
        return Tensor(rng.normal(shape, std=INIT_STD, dtype=dtype), requires_grad=True)

    p = ParameterSet()
    if config.cond_dim > 0:
        p.add("g/proj/W", gauss((config.cond_dim, config.text_raw_dim)))
    p.add("g/top/A", gauss((config.top_hidden_dim, config.input_dim)))
    if include_temporal:
        p.add("g/top/R", gauss((config.top_hidden_dim, config.top_hidden_dim)))
    _add_bn(p, "g/top/bn", config.top_hidden_dim, dtype)
    c1 = config.base_channels[0]
    p.add("g/seed/P", gauss((c1 * config.base_size**2, config.top_hidden_dim)))
    for i in range(1, config.levels + 1):
        ci = config.base_channels[i - 1]
        if i < config.levels:
            p.add(f"g/level{i}/W", gauss((ci, config.base_channels[i], 4, 4)))
        if include_temporal:
            tk = config.temporal_kernel
            p.add(f"g/level{i}/U", gauss((ci, ci, tk, tk)))
        p.add(f"g/level{i}/B", gauss((ci, 1, 1)))
        _add_bn(p, f"g/level{i}/bn", ci, dtype)
    p.add("g/head/W", gauss((config.base_channels[-1], config.out_channels, 4, 4)))
    return p


def init_image_generator(config: RDNConfig, rng: Rng, dtype=np.float32) -> ParameterSet:
    """The spatial subset of the generator: shared code path at T=1."""
    return init_rdn(config, rng, dtype=dtype, include_temporal=False)


def _check_finite(x: Tensor, where: str) -> None:
    if not np.isfinite(x.data).all():
        raise NumericError(f"non-finite values at {where}")


def top_level_states(params: ParameterSet, config: RDNConfig, input_vec: Tensor, mode: str, timesteps: int) -> list[Tensor]:
    """The 1D recurrence h_1..h_T feeding the lattice."""
    states = []
    h = relu(_bn(params, "g/top/bn", linear(input_vec, params["g/top/A"]), mode))
    _check_finite(h, "top level, timestep 1")
    states.append(h)
    for t in range(2, timesteps + 1):
        h = relu(_bn(params, "g/top/bn", linear(h, params["g/top/R"]), mode))
        _check_finite(h, f"top level, timestep {t}")
        states.append(h)
    return states


def rdn_forward(params: ParameterSet, config: RDNConfig, input_vec: Tensor, mode: str = "train", timesteps: int | None = None) -> Tensor:
    """Synthesize (N, out_channels, T, frame, frame) video from (N, input_dim).

    ``timesteps`` overrides the config's T: the shared weights run for any
    length. At T=1 no temporal weight is touched, which is what makes the
    image generator a strict subset of this network.
    """
    t_total = config.timesteps if timesteps is None else timesteps
    if t_total < 1:
        raise UsageError(f"timesteps must be >= 1, got {t_total}")
    if input_vec.ndim != 2 or input_vec.shape[1] != config.input_dim:
        raise ShapeError(f"generator input must be (N, {config.input_dim}), got {tuple(input_vec.shape)}")
    if input_vec.dtype != params["g/top/A"].dtype:
        raise UsageError(f"input dtype {input_vec.dtype} does not match parameter dtype {params['g/top/A'].dtype}")
    n = input_vec.shape[0]
    pad_t = (config.temporal_kernel - 1) // 2
    states = top_level_states(params, config, input_vec, mode, t_total)

    prev_row: list[Tensor | None] = [None] * (config.levels + 1)
    frames = []
    for t in range(1, t_total + 1):
        row = []
        h = None
        for i in range(1, config.levels + 1):
            if i == 1:
                pre = reshape(linear(states[t - 1], params["g/seed/P"]), (n, config.base_channels[0], config.base_size, config.base_size))
            else:
                pre = deconv2d(h, params[f"g/level{i - 1}/W"], stride=2, pad=1)
            if t > 1:
                pre = pre + conv2d(prev_row[i], params[f"g/level{i}/U"], stride=1, pad=pad_t)
            pre = pre + params[f"g/level{i}/B"]
            h = relu(_bn(params, f"g/level{i}/bn", pre, mode))
            _check_finite(h, f"level {i}, timestep {t}")
            row.append(h)
        frame = tanh(deconv2d(h, params["g/head/W"], stride=2, pad=1))
        _check_finite(frame, f"output head, timestep {t}")
        frames.append(frame)
        prev_row = [None] + row
    return stack(frames, axis=2)


def generate_video(params: ParameterSet, config: RDNConfig, z: Tensor, cond: Tensor | None = None, mode: str = "train", timesteps: int | None = None) -> Tensor:
    """Video from noise (N, noise_dim) and condition (N, cond_dim)."""
    if z.ndim != 2 or z.shape[1] != config.noise_dim:
        raise ShapeError(f"noise must be (N, {config.noise_dim}), got {tuple(z.shape)}")
    if config.cond_dim == 0:
        if cond is not None and cond.size > 0:
            raise ShapeError(f"cond_dim is 0 but a condition of shape {tuple(cond.shape)} was given")
        joint = z
    else:
        if cond is None:
            raise UsageError("this config is conditional: a condition tensor is required")
        if cond.ndim != 2 or cond.shape[1] != config.cond_dim or cond.shape[0] != z.shape[0]:
            raise ShapeError(f"condition must be ({z.shape[0]}, {config.cond_dim}), got {tuple(cond.shape)}")
        joint = concat_channels(z, cond)
    return rdn_forward(params, config, joint, mode=mode, timesteps=timesteps)


def spatial_paths(params: ParameterSet) -> set[str]:
    """Parameter paths shared with the image generator (no R, no U_i)."""
    out = set()
    for path in params.paths():
        if path == "g/top/R" or (path.startswith("g/level") and path.endswith("/U")):
            continue
        out.add(path)
    return out


def transplant_spatial_weights(image_params: ParameterSet, rdn_params: ParameterSet) -> ParameterSet:
    """Copy the pretrained spatial stage into a full generator, in place.

    Everything the image generator owns is copied (input map, seed
    projection, level deconvolutions and biases, batchnorm tensors
    including running stats, text projection, output head); the recurrence
    R and temporal kernels U_i keep their fresh initialization.
    """
    from .errors import TransplantError

    expected = spatial_paths(rdn_params)
    have = set(image_params.paths())
    if have != expected:
        missing = sorted(expected - have)
        extra = sorted(have - expected)
        detail = []
        if missing:
            detail.append(f"missing from image generator: {missing[:4]}")
        if extra:
            detail.append(f"unexpected in image generator: {extra[:4]}")
        raise TransplantError("spatial parameter sets do not line up; " + "; ".join(detail))
    for path in sorted(have):
        src = image_params[path]
        dst = rdn_params[path]
        if src.shape != dst.shape:
            raise TransplantError(f"shape mismatch at {path}: image {tuple(src.shape)} vs video {tuple(dst.shape)}")
        dst.data = src.data.copy()
    return rdn_params
