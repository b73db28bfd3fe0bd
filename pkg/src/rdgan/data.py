"""Video ingestion, synthetic captioned moving-shapes data, and file formats.

Pixels live in [-1, 1] internally (pairing with the generator's tanh head)
and as 0-255 bytes at the PPM boundary. Video tensors are stored in a small
self-describing binary format with a trailing checksum so truncation and
corruption are detected on read.
"""

from __future__ import annotations

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, FormatError, InputError
from .rng import Rng

log = logging.getLogger(__name__)

VIDEO_MAGIC = b"RDGV"
VIDEO_VERSION = 1

COLOR_RGB = {
    "red": (1.0, -1.0, -1.0),
    "green": (-1.0, 1.0, -1.0),
    "blue": (-1.0, -1.0, 1.0),
    "yellow": (1.0, 1.0, -1.0),
    "white": (1.0, 1.0, 1.0),
}

DIRECTION_VELOCITY = {
    "left": (-1, 0),
    "right": (1, 0),
    "up": (0, -1),
    "down": (0, 1),
}


@dataclass
class VideoTensor:
    """f32 pixel data shaped (N, C, T, H, W), values in [-1, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        if arr.ndim != 5:
            raise InputError(f"VideoTensor needs 5 axes (N,C,T,H,W), got shape {tuple(arr.shape)}")
        if min(arr.shape) <= 0:
            raise InputError(f"VideoTensor extents must be positive, got {tuple(arr.shape)}")
        if arr.min() < -1.0 or arr.max() > 1.0:
            raise InputError(f"VideoTensor values outside [-1, 1]: range [{arr.min():.4f}, {arr.max():.4f}]")
        self.data = arr

    @property
    def shape(self):
        return self.data.shape


@dataclass
class CaptionedSegment:
    video: VideoTensor
    caption: str
    class_label: int

    def __post_init__(self):
        if not self.caption:
            raise InputError("segment caption must be non-empty")
        if self.class_label < 0:
            raise InputError(f"class label must be non-negative, got {self.class_label}")


# ---------------------------------------------------------------------------
# segmentation and resizing


def segment_video(frames: Sequence, window: int = 16, stride: int = 1) -> list:
    """Sliding windows over the frame axis: [0..w), [1..w+1), ...

    A clip shorter than the window yields no segments (logged, not an
    error), so count = max(0, F - window + 1) at stride 1.
    """
    if window < 1:
        raise InputError(f"segment window must be >= 1, got {window}")
    if stride < 1:
        raise InputError(f"segment stride must be >= 1, got {stride}")
    f = len(frames)
    if f < window:
        log.info("clip of %d frames is shorter than window %d; no segments", f, window)
        return []
    out = []
    for start in range(0, f - window + 1, stride):
        chunk = frames[start : start + window]
        out.append(np.stack([np.asarray(fr) for fr in chunk]) if not isinstance(chunk, np.ndarray) else chunk.copy())
    return out


def resize_frame(frame: np.ndarray, target=(64, 64)) -> np.ndarray:
    """Bilinear resize of the trailing (H, W) axes, channels independent.

    Sample points follow the half-pixel convention: source coordinate
    (dst + 0.5) * scale - 0.5, clamped to the source extent.
    """
    frame = np.asarray(frame)
    if frame.ndim < 2:
        raise InputError(f"resize_frame needs at least (H, W), got shape {tuple(frame.shape)}")
    h, w = frame.shape[-2:]
    th, tw = target
    if h <= 0 or w <= 0 or th <= 0 or tw <= 0:
        raise InputError(f"resize_frame extents must be positive: source {h}x{w}, target {th}x{tw}")
    sy = np.clip((np.arange(th) + 0.5) * (h / th) - 0.5, 0, h - 1)
    sx = np.clip((np.arange(tw) + 0.5) * (w / tw) - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0).astype(frame.dtype if frame.dtype.kind == "f" else np.float64)
    fx = (sx - x0).astype(fy.dtype)
    ya, yb = frame[..., y0, :], frame[..., y1, :]
    top = ya[..., :, x0] * (1 - fx) + ya[..., :, x1] * fx
    bot = yb[..., :, x0] * (1 - fx) + yb[..., :, x1] * fx
    fy_col = fy.reshape((1,) * (frame.ndim - 2) + (th, 1))
    return (top * (1 - fy_col) + bot * fy_col).astype(frame.dtype if frame.dtype.kind == "f" else np.float32)


# ---------------------------------------------------------------------------
# synthetic moving-shapes dataset


@dataclass
class SyntheticSpec:
    """Combinatorial recipe: one shape of one color moving one direction."""

    shapes: tuple = ("square", "circle")
    colors: tuple = ("red", "blue")
    directions: tuple = ("left", "right")
    frame_size: int = 32
    timesteps: int = 8
    radius: int = 5
    speed: int = 2

    def __post_init__(self):
        for c in self.colors:
            if c not in COLOR_RGB:
                raise InputError(f"unknown color {c!r}; known: {sorted(COLOR_RGB)}")
        for d in self.directions:
            if d not in DIRECTION_VELOCITY:
                raise InputError(f"unknown direction {d!r}; known: {sorted(DIRECTION_VELOCITY)}")
        for s in self.shapes:
            if s not in ("square", "circle"):
                raise InputError(f"unknown shape {s!r}; known: ['circle', 'square']")

    @property
    def class_count(self) -> int:
        # class = (shape, direction); color is a nuisance factor
        return len(self.shapes) * len(self.directions)

    def class_id(self, shape: str, direction: str) -> int:
        return self.shapes.index(shape) * len(self.directions) + self.directions.index(direction)

    def class_name(self, class_id: int) -> str:
        shape = self.shapes[class_id // len(self.directions)]
        direction = self.directions[class_id % len(self.directions)]
        return f"{shape}_{direction}"


def render_shape_video(spec: SyntheticSpec, shape: str, color: str, direction: str, start_xy: tuple) -> np.ndarray:
    """Frames (3, T, H, W): one shape translating at constant velocity.

    Positions wrap toroidally; the mask is computed in wrapped offsets
    ((x - cx + S/2) mod S) - S/2 so the shape re-enters the far border.
    """
    s = spec.frame_size
    vx, vy = DIRECTION_VELOCITY[direction]
    vx, vy = vx * spec.speed, vy * spec.speed
    rgb = COLOR_RGB[color]
    xs = np.arange(s)
    ys = np.arange(s)
    video = np.full((3, spec.timesteps, s, s), -1.0, dtype=np.float32)
    for t in range(spec.timesteps):
        cx = start_xy[0] + vx * t
        cy = start_xy[1] + vy * t
        dx = ((xs - cx + s // 2) % s) - s // 2
        dy = ((ys - cy + s // 2) % s) - s // 2
        if shape == "square":
            mask = (np.abs(dy[:, None]) <= spec.radius) & (np.abs(dx[None, :]) <= spec.radius)
        else:
            mask = dy[:, None] ** 2 + dx[None, :] ** 2 <= spec.radius**2
        for ch in range(3):
            video[ch, t][mask] = rgb[ch]
    return video


def make_synthetic_dataset(spec: SyntheticSpec, count: int, rng: Rng) -> list[CaptionedSegment]:
    """Draw ``count`` segments uniformly over the spec's combinations."""
    out = []
    n_combo = len(spec.shapes) * len(spec.colors) * len(spec.directions)
    for i in range(count):
        combo = int(rng.integers(0, n_combo))
        shape = spec.shapes[combo % len(spec.shapes)]
        combo //= len(spec.shapes)
        color = spec.colors[combo % len(spec.colors)]
        combo //= len(spec.colors)
        direction = spec.directions[combo]
        start = (int(rng.integers(0, spec.frame_size)), int(rng.integers(0, spec.frame_size)))
        frames = render_shape_video(spec, shape, color, direction, start)
        caption = f"a {color} {shape} moving {direction}"
        out.append(
            CaptionedSegment(
                video=VideoTensor(frames[None]),
                caption=caption,
                class_label=spec.class_id(shape, direction),
            )
        )
    return out


# ---------------------------------------------------------------------------
# video-tensor file format

_HEADER = struct.Struct("<4sH5I")


def write_video_file(v: VideoTensor, path) -> None:
    payload = np.ascontiguousarray(v.data, dtype="<f4").tobytes()
    header = _HEADER.pack(VIDEO_MAGIC, VIDEO_VERSION, *v.data.shape)
    body = header + payload
    crc = zlib.crc32(body) & 0xFFFFFFFF
    Path(path).write_bytes(body + struct.pack("<I", crc))


def read_video_file(path) -> VideoTensor:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated video file ({len(blob)} bytes)")
    magic, version, n, c, t, h, w = _HEADER.unpack_from(blob)
    if magic != VIDEO_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {VIDEO_MAGIC!r}")
    if version != VIDEO_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * n * c * t * h * w + 4
    if len(blob) != expected:
        raise FormatError(f"{path}: size {len(blob)} does not match header extents (expected {expected})")
    (crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    actual = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if crc != actual:
        raise FormatError(f"{path}: CRC mismatch (stored {crc:08x}, computed {actual:08x})")
    data = np.frombuffer(blob, dtype="<f4", count=n * c * t * h * w, offset=_HEADER.size)
    return VideoTensor(data.reshape(n, c, t, h, w).copy())


# ---------------------------------------------------------------------------
# PPM import/export


def quantize_pixel(x: np.ndarray) -> np.ndarray:
    """[-1,1] float to 0-255 byte, rounding half up so 0.0 lands on 128."""
    return np.clip(np.floor((x + 1.0) * 127.5 + 0.5), 0, 255).astype(np.uint8)


def export_frames(v: VideoTensor, out_dir) -> list[Path]:
    """One binary PPM (P6) per frame of a single video, frame_0000.ppm on."""
    n, c, t, h, w = v.shape
    if n != 1:
        raise InputError(f"export_frames expects a single video (N=1), got N={n}")
    if c != 3:
        raise InputError(f"export_frames expects 3 channels, got {c}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(t):
        rgb = quantize_pixel(v.data[0, :, i])  # (3, H, W)
        raster = rgb.transpose(1, 2, 0).tobytes()
        path = out_dir / f"frame_{i:04d}.ppm"
        path.write_bytes(f"P6\n{w} {h}\n255\n".encode("ascii") + raster)
        paths.append(path)
    return paths


def _read_pnm_tokens(blob: bytes, count: int) -> tuple[list[bytes], int]:
    """First ``count`` whitespace-separated header tokens and the offset after."""
    tokens = []
    i = 0
    while len(tokens) < count:
        if i >= len(blob):
            raise FormatError("PNM header ended prematurely")
        ch = blob[i : i + 1]
        if ch == b"#":
            while i < len(blob) and blob[i : i + 1] != b"\n":
                i += 1
        elif ch.isspace():
            i += 1
        else:
            j = i
            while j < len(blob) and not blob[j : j + 1].isspace():
                j += 1
            tokens.append(blob[i:j])
            i = j
    return tokens, i + 1  # single whitespace byte after maxval


def read_pnm(path) -> np.ndarray:
    """Binary PPM (P6) or PGM (P5) to float (C, H, W) in [-1, 1]."""
    blob = Path(path).read_bytes()
    tokens, offset = _read_pnm_tokens(blob, 4)
    magic = tokens[0]
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"{path}: unsupported PNM magic {magic!r}")
    w, h, maxval = (int(t) for t in tokens[1:4])
    if maxval != 255:
        raise FormatError(f"{path}: only maxval 255 supported, got {maxval}")
    channels = 3 if magic == b"P6" else 1
    need = w * h * channels
    raster = blob[offset : offset + need]
    if len(raster) != need:
        raise FormatError(f"{path}: raster truncated ({len(raster)} of {need} bytes)")
    arr = np.frombuffer(raster, dtype=np.uint8).reshape(h, w, channels)
    return (arr.astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)


def ingest_frame_dir(dir_path, window: int = 16, target=(64, 64)) -> list[np.ndarray]:
    """Directory of per-frame PPM/PGM files to resized sliding-window segments.

    Returns a list of (C, window, H, W) arrays, lexicographic frame order.
    """
    dir_path = Path(dir_path)
    files = sorted(p for p in dir_path.iterdir() if p.suffix in (".ppm", ".pgm"))
    if not files:
        raise DataError(f"{dir_path}: no .ppm/.pgm frames found")
    frames = []
    for p in files:
        img = read_pnm(p)
        if img.shape[0] == 1:
            img = np.repeat(img, 3, axis=0)
        frames.append(resize_frame(img, target))
    segments = segment_video(np.stack(frames), window=window)
    return [seg.transpose(1, 0, 2, 3) for seg in segments]


# ---------------------------------------------------------------------------
# dataset manifest


def write_dataset(segments: list[CaptionedSegment], out_dir) -> Path:
    """Segments as .rdgv files plus a TSV manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, seg in enumerate(segments):
        rel = f"segment_{i:05d}.rdgv"
        write_video_file(seg.video, out_dir / rel)
        if "\t" in seg.caption or "\n" in seg.caption:
            raise InputError(f"caption may not contain tab or newline: {seg.caption!r}")
        lines.append(f"{rel}\t{seg.caption}\t{seg.class_label}")
    manifest = out_dir / "manifest.tsv"
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def read_dataset(manifest_path) -> list[CaptionedSegment]:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"{manifest_path}: manifest not found")
    root = manifest_path.parent
    out = []
    for lineno, line in enumerate(manifest_path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{manifest_path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
        rel, caption, label = parts
        try:
            label_id = int(label)
        except ValueError:
            raise FormatError(f"{manifest_path}:{lineno}: class id {label!r} is not an integer") from None
        out.append(CaptionedSegment(video=read_video_file(root / rel), caption=caption, class_label=label_id))
    if not out:
        raise DataError(f"{manifest_path}: manifest lists no segments")
    return out
