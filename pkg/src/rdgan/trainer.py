"""Adversarial training: losses, the two-phase step, pretraining, checkpoints.

One step runs one discriminator update (real batch plus freshly generated,
detached fakes) followed by one generator update on fresh noise, both with
Adam at lr 0.0002, beta1 0.5. Fake samples reuse the real batch's captions
so that both loss terms are conditioned the same way.

Checkpoints capture everything a bitwise continuation needs: both
parameter sets, both optimizers' moments and step counters, the global
step, the RNG state, and a config snapshot.
"""

from __future__ import annotations

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from .data import VideoTensor
from .discriminator import D3Config, disc_forward, image_disc_forward, init_discriminator, init_image_discriminator
from .errors import FormatError, NumericError, ShapeError, UsageError
from .generator import RDNConfig, generate_video, init_image_generator, init_rdn
from .optim import Adam
from .rng import Rng
from .tensor import ParameterSet, Tape, Tensor, add, backward, clip, neg, reshape, sub, tlog, tmean
from .text import TextEncoder, project_batch

LOG_EPS = 1e-7
G_LOSS_MODES = ("nonsaturating", "saturating")


def d_loss(real_scores: Tensor, fake_scores: Tensor, eps: float = LOG_EPS) -> Tensor:
    """-mean(log D(real)) - mean(log(1 - D(fake))), logs clamped by eps."""
    r = clip(real_scores, eps, 1.0 - eps)
    f = clip(fake_scores, eps, 1.0 - eps)
    return add(neg(tmean(tlog(r))), neg(tmean(tlog(sub(1.0, f)))))


def g_loss(fake_scores: Tensor, mode: str = "nonsaturating", eps: float = LOG_EPS) -> Tensor:
    """Generator objective; both modes push fake scores toward 1.

    nonsaturating: -mean(log D(fake)) (default; strong gradient when the
    discriminator wins). saturating: mean(log(1 - D(fake))), the original
    minimax term, which flattens as fake scores approach 0.
    """
    f = clip(fake_scores, eps, 1.0 - eps)
    if mode == "nonsaturating":
        return neg(tmean(tlog(f)))
    if mode == "saturating":
        return tmean(tlog(sub(1.0, f)))
    raise UsageError(f"unknown g_loss mode {mode!r}; expected one of {G_LOSS_MODES}")


@dataclass
class TrainMetrics:
    d_loss: float
    g_loss: float
    real_score_mean: float
    fake_score_mean: float
    step: int
    wall_time: float


@dataclass
class TrainState:
    g_params: ParameterSet
    d_params: ParameterSet
    g_config: RDNConfig
    d_config: D3Config
    adam_g: Adam
    adam_d: Adam
    rng: Rng
    step: int = 0
    g_loss_mode: str = "nonsaturating"
    config_text: str = ""
    encoder: TextEncoder = field(default=None)

    def __post_init__(self):
        if self.g_loss_mode not in G_LOSS_MODES:
            raise UsageError(f"unknown g_loss mode {self.g_loss_mode!r}")
        if self.encoder is None:
            self.encoder = TextEncoder(dim=self.g_config.text_raw_dim)


def make_train_state(
    g_config: RDNConfig,
    d_config: D3Config,
    seed: int,
    lr: float = 2e-4,
    beta1: float = 0.5,
    g_loss_mode: str = "nonsaturating",
    config_text: str = "",
) -> TrainState:
    rng = Rng(seed)
    g_params = init_rdn(g_config, rng)
    d_params = init_discriminator(d_config, rng)
    return TrainState(
        g_params=g_params,
        d_params=d_params,
        g_config=g_config,
        d_config=d_config,
        adam_g=Adam(g_params, lr=lr, beta1=beta1),
        adam_d=Adam(d_params, lr=lr, beta1=beta1),
        rng=rng,
        g_loss_mode=g_loss_mode,
        config_text=config_text,
    )


def _as_batch_array(videos) -> np.ndarray:
    if isinstance(videos, VideoTensor):
        return videos.data
    return np.asarray(videos, dtype=np.float32)


def _abort_non_finite(state: TrainState, what: str, dump_path: str | None) -> None:
    msg = f"non-finite {what} at step {state.step + 1}"
    if dump_path:
        save_checkpoint(state, dump_path)
        msg += f"; state dumped to {dump_path}"
    raise NumericError(msg)


def train_step(state: TrainState, videos, captions: list[str], dump_path: str | None = None) -> TrainMetrics:
    """One discriminator update, then one generator update."""
    t0 = time.perf_counter()
    real = Tensor(_as_batch_array(videos))
    gcfg, dcfg = state.g_config, state.d_config
    n = real.shape[0]
    if len(captions) != n:
        raise ShapeError(f"{n} videos but {len(captions)} captions")
    raw = Tensor(state.encoder.encode_batch(captions))

    # Discriminator phase. Fakes are generated outside the tape, so no
    # gradient reaches the generator.
    z = Tensor(state.rng.normal((n, gcfg.noise_dim)))
    fake_cond = project_batch(raw.data, state.g_params["g/proj/W"]) if gcfg.cond_dim else None
    fake = generate_video(state.g_params, gcfg, z, fake_cond, mode="train").detach()
    with Tape() as tape:
        cond_d = project_batch(raw.data, state.d_params["d/proj/W"]) if dcfg.cond_dim else None
        real_scores = disc_forward(state.d_params, dcfg, real, cond_d, mode="train")
        fake_scores = disc_forward(state.d_params, dcfg, fake, cond_d, mode="train")
        dl = d_loss(real_scores, fake_scores)
        if not np.isfinite(dl.data):
            _abort_non_finite(state, "discriminator loss", dump_path)
        backward(dl)
    tape.release()
    state.adam_d.step()
    state.g_params.zero_grad()
    state.d_params.zero_grad()

    # Generator phase, on fresh noise.
    z2 = Tensor(state.rng.normal((n, gcfg.noise_dim)))
    with Tape() as tape:
        cond_g = project_batch(raw.data, state.g_params["g/proj/W"]) if gcfg.cond_dim else None
        fake2 = generate_video(state.g_params, gcfg, z2, cond_g, mode="train")
        cond_d2 = project_batch(raw.data, state.d_params["d/proj/W"]) if dcfg.cond_dim else None
        fake2_scores = disc_forward(state.d_params, dcfg, fake2, cond_d2, mode="train")
        gl = g_loss(fake2_scores, state.g_loss_mode)
        if not np.isfinite(gl.data):
            _abort_non_finite(state, "generator loss", dump_path)
        backward(gl)
    tape.release()
    state.adam_g.step()
    state.g_params.zero_grad()
    state.d_params.zero_grad()

    state.step += 1
    return TrainMetrics(
        d_loss=float(dl.data),
        g_loss=float(gl.data),
        real_score_mean=float(real_scores.data.mean()),
        fake_score_mean=float(fake_scores.data.mean()),
        step=state.step,
        wall_time=time.perf_counter() - t0,
    )


def sample_videos(state: TrainState, captions: list[str], rng: Rng, mode: str = "eval") -> np.ndarray:
    """One video per caption from fresh noise; no tape, no parameter updates.

    Eval mode by default: train-mode batch statistics would tie the samples
    in a batch together.
    """
    if not captions:
        raise UsageError("sample_videos: need at least one caption")
    gcfg = state.g_config
    raw = state.encoder.encode_batch(captions)
    z = Tensor(rng.normal((len(captions), gcfg.noise_dim)))
    cond = project_batch(raw, state.g_params["g/proj/W"]) if gcfg.cond_dim else None
    return generate_video(state.g_params, gcfg, z, cond, mode=mode).data


def run_training(
    state: TrainState,
    videos: np.ndarray,
    captions: list[str],
    steps: int,
    batch_size: int,
    dump_path: str | None = None,
    checkpoint_path: str | None = None,
    checkpoint_every: int = 0,
    on_metrics=None,
) -> list[TrainMetrics]:
    """Sample batches (with replacement) and step; one RNG draw per batch."""
    count = videos.shape[0]
    if count < 1:
        raise UsageError("empty training set")
    if batch_size < 1:
        raise UsageError(f"batch_size must be >= 1, got {batch_size}")
    history = []
    for _ in range(steps):
        idx = state.rng.integers(0, count, size=batch_size)
        batch = videos[idx]
        batch_captions = [captions[i] for i in idx]
        metrics = train_step(state, batch, batch_captions, dump_path=dump_path)
        history.append(metrics)
        if on_metrics is not None:
            on_metrics(metrics)
        if checkpoint_path and checkpoint_every and state.step % checkpoint_every == 0:
            save_checkpoint(state, checkpoint_path)
    return history


def pretrain_image_gan(
    frames: np.ndarray,
    captions: list[str],
    g_config: RDNConfig,
    d_config: D3Config,
    rng: Rng,
    steps: int,
    batch_size: int = 16,
    lr: float = 2e-4,
    beta1: float = 0.5,
    g_loss_mode: str = "nonsaturating",
    on_metrics=None,
) -> ParameterSet:
    """Train the spatial stage on single frames; returns generator weights.

    The image generator is the T=1 slice of the video generator (no
    recurrence, no temporal kernels), trained against a 2D discriminator
    of matching widths. The returned ParameterSet is exactly the spatial
    subset expected by transplant_spatial_weights.
    """
    frames = np.asarray(frames, dtype=np.float32)
    if frames.ndim != 4:
        raise ShapeError(f"frames must be (N, C, H, W), got {tuple(frames.shape)}")
    count = frames.shape[0]
    if count != len(captions):
        raise ShapeError(f"{count} frames but {len(captions)} captions")
    encoder = TextEncoder(dim=g_config.text_raw_dim)
    g_params = init_image_generator(g_config, rng)
    d_params = init_image_discriminator(d_config, rng)
    adam_g = Adam(g_params, lr=lr, beta1=beta1)
    adam_d = Adam(d_params, lr=lr, beta1=beta1)
    h, w = g_config.frame_size, g_config.frame_size

    def make_frames(params, z, cond):
        video = generate_video(params, g_config, z, cond, mode="train", timesteps=1)
        return reshape(video, (z.shape[0], g_config.out_channels, h, w))

    for step in range(1, steps + 1):
        idx = rng.integers(0, count, size=batch_size)
        real = Tensor(frames[idx])
        raw = encoder.encode_batch([captions[i] for i in idx])

        z = Tensor(rng.normal((batch_size, g_config.noise_dim)))
        cond_free = project_batch(raw, g_params["g/proj/W"]) if g_config.cond_dim else None
        fake = make_frames(g_params, z, cond_free).detach()
        with Tape() as tape:
            cond_d = project_batch(raw, d_params["d/proj/W"]) if d_config.cond_dim else None
            real_scores = image_disc_forward(d_params, d_config, real, cond_d, mode="train")
            fake_scores = image_disc_forward(d_params, d_config, fake, cond_d, mode="train")
            dl = d_loss(real_scores, fake_scores)
            if not np.isfinite(dl.data):
                raise NumericError(f"non-finite image discriminator loss at pretrain step {step}")
            backward(dl)
        tape.release()
        adam_d.step()
        g_params.zero_grad()
        d_params.zero_grad()

        z2 = Tensor(rng.normal((batch_size, g_config.noise_dim)))
        with Tape() as tape:
            cond_g = project_batch(raw, g_params["g/proj/W"]) if g_config.cond_dim else None
            fake2 = make_frames(g_params, z2, cond_g)
            cond_d2 = project_batch(raw, d_params["d/proj/W"]) if d_config.cond_dim else None
            fake2_scores = image_disc_forward(d_params, d_config, fake2, cond_d2, mode="train")
            gl = g_loss(fake2_scores, g_loss_mode)
            if not np.isfinite(gl.data):
                raise NumericError(f"non-finite image generator loss at pretrain step {step}")
            backward(gl)
        tape.release()
        adam_g.step()
        g_params.zero_grad()
        d_params.zero_grad()

        if on_metrics is not None:
            on_metrics(
                TrainMetrics(
                    d_loss=float(dl.data),
                    g_loss=float(gl.data),
                    real_score_mean=float(real_scores.data.mean()),
                    fake_score_mean=float(fake_scores.data.mean()),
                    step=step,
                    wall_time=0.0,
                )
            )
    return g_params


# ---------------------------------------------------------------------------
# Checkpoint file: magic "RDGC", version u16, parameter table, moment table,
# RNG state (16 bytes), trailing CRC32 of everything prior. Tables are
# count-prefixed sequences of {path_len u32, path UTF-8, rank u8,
# extents u32[rank], payload f32 LE}, sorted by path.

CHECKPOINT_MAGIC = b"RDGC"
CHECKPOINT_VERSION = 1
RNG_STATE_BYTES = 16


def _encode_table(entries: dict[str, np.ndarray]) -> bytes:
    parts = [struct.pack("<I", len(entries))]
    for path in sorted(entries):
        arr = np.ascontiguousarray(entries[path], dtype="<f4")
        encoded = path.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


class _Cursor:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"checkpoint truncated at offset {self.pos} (needed {n} more bytes)")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]


def _decode_table(cur: _Cursor) -> dict[str, np.ndarray]:
    count = cur.u32()
    out = {}
    for _ in range(count):
        at = cur.pos
        path = cur.take(cur.u32()).decode("utf-8")
        if path in out:
            raise FormatError(f"duplicate checkpoint entry {path!r} at offset {at}")
        rank = cur.u8()
        extents = tuple(cur.u32() for _ in range(rank))
        size = int(np.prod(extents, dtype=np.int64)) if rank else 1
        payload = cur.take(4 * size)
        out[path] = np.frombuffer(payload, dtype="<f4").reshape(extents).copy()
    return out


def _moment_entries(name: str, adam: Adam) -> dict[str, np.ndarray]:
    out = {f"{name}/t": np.full(1, adam.t, dtype=np.float32)}
    for path, arr in adam.m.items():
        out[f"{name}/m/{path}"] = arr
    for path, arr in adam.v.items():
        out[f"{name}/v/{path}"] = arr
    return out


def save_checkpoint(state: TrainState, path: str) -> None:
    params = {p: t.data for p, t in state.g_params.items()}
    params.update({p: t.data for p, t in state.d_params.items()})
    moments = _moment_entries("adam_g", state.adam_g)
    moments.update(_moment_entries("adam_d", state.adam_d))
    moments["meta/step"] = np.full(1, state.step, dtype=np.float32)
    config_bytes = state.config_text.encode("utf-8")
    moments["meta/config"] = np.frombuffer(config_bytes, dtype=np.uint8).astype(np.float32)
    body = CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION)
    body += _encode_table(params)
    body += _encode_table(moments)
    body += state.rng.state_bytes()
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


@dataclass
class CheckpointBlob:
    params: dict
    moments: dict
    rng_state: bytes

    def config_text(self) -> str:
        raw = self.moments.get("meta/config")
        if raw is None:
            return ""
        return bytes(raw.astype(np.uint8)).decode("utf-8")

    def step(self) -> int:
        arr = self.moments.get("meta/step")
        return 0 if arr is None else int(arr.reshape(-1)[0])


def read_checkpoint(path: str) -> CheckpointBlob:
    with open(path, "rb") as f:
        blob = f.read()
    cur = _Cursor(blob)
    magic = cur.take(4)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r} at offset 0")
    version = struct.unpack("<H", cur.take(2))[0]
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    params = _decode_table(cur)
    moments = _decode_table(cur)
    rng_state = cur.take(RNG_STATE_BYTES)
    stored_crc = struct.unpack("<I", cur.take(4))[0]
    if cur.pos != len(blob):
        raise FormatError(f"{len(blob) - cur.pos} trailing bytes after checkpoint at offset {cur.pos}")
    actual = zlib.crc32(blob[: len(blob) - 4])
    if stored_crc != actual:
        raise FormatError(f"checkpoint checksum mismatch: stored {stored_crc:#010x}, computed {actual:#010x}")
    return CheckpointBlob(params=params, moments=moments, rng_state=rng_state)


def _restore_params(params: ParameterSet, saved: dict, what: str) -> None:
    want = set(params.paths())
    have = {p for p in saved if p.split("/", 1)[0] == what}
    if want != have:
        missing = sorted(want - have)[:4]
        extra = sorted(have - want)[:4]
        raise FormatError(f"checkpoint does not match config: missing {missing}, unexpected {extra}")
    for p in sorted(want):
        arr = saved[p]
        t = params[p]
        if arr.shape != t.data.shape:
            raise FormatError(f"checkpoint entry {p} has shape {arr.shape}, config wants {t.data.shape}")
        t.data = arr.astype(np.float32, copy=True)


def _restore_adam(adam: Adam, moments: dict, name: str) -> None:
    t = moments.get(f"{name}/t")
    adam.t = 0 if t is None else int(t.reshape(-1)[0])
    prefix_m = f"{name}/m/"
    prefix_v = f"{name}/v/"
    for key, arr in moments.items():
        if key.startswith(prefix_m):
            adam.m[key[len(prefix_m):]] = arr.astype(np.float32, copy=True)
        elif key.startswith(prefix_v):
            adam.v[key[len(prefix_v):]] = arr.astype(np.float32, copy=True)


def load_checkpoint(
    path: str,
    g_config: RDNConfig,
    d_config: D3Config,
    lr: float = 2e-4,
    beta1: float = 0.5,
    g_loss_mode: str = "nonsaturating",
) -> TrainState:
    """Rebuild a TrainState for a bitwise-identical continuation."""
    blob = read_checkpoint(path)
    state = make_train_state(g_config, d_config, seed=0, lr=lr, beta1=beta1, g_loss_mode=g_loss_mode, config_text=blob.config_text())
    _restore_params(state.g_params, blob.params, "g")
    _restore_params(state.d_params, blob.params, "d")
    _restore_adam(state.adam_g, blob.moments, "adam_g")
    _restore_adam(state.adam_d, blob.moments, "adam_d")
    state.rng = Rng.from_bytes(blob.rng_state)
    state.step = blob.step()
    return state
