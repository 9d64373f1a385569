"""Write-only AFF1/AFA1 serializers plus a minimal P6 reader.

Implemented from the published byte layouts rather than by importing the
consumer package, so its readers stay an independent check on these
writers. Layouts, little-endian throughout:

AFF1 header: magic "AFF1" | version u16 = 1 | flags u16 (bit0: schema
  carries audio) | id_len u16 | video_id utf-8 | fps f64 | frame_count u64
  | n_scales u8 = 3 | scales 3xf32 | D_v u32 | D_a u32
AFF1 record: frame_index u64 | timestamp f64 | label u8 (255 = no
  annotation) | audio_present u8 | visual 3*D_v f32 scale-major ascending
  | audio D_a f32 (zeros when absent)

AFA1: magic "AFA1" | D_a u32 | hop f64 | count u64, then per step
  timestamp f64 + D_a f32.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import InputError

AFF1_MAGIC = b"AFF1"
AFF1_VERSION = 1
AFA1_MAGIC = b"AFA1"
SCALES = (0.9, 1.2, 1.5)
NO_ANNOTATION = 255


def atomic_write(path, blob: bytes) -> Path:
    """Write to a sibling temp file, then rename into place."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(blob)
    os.replace(tmp, path)
    return path


def encode_aff1(video_id: str, fps: float, frames) -> bytes:
    """`frames`: iterable of (frame_index, timestamp, {scale: f32 vector}).

    Audio columns are not exported here (D_a = 0); the audio path ships
    separately as AFA1 so alignment stays downstream.
    """
    frames = list(frames)
    if not frames:
        raise InputError(f"video {video_id!r} has no exportable frames")
    d_v = int(frames[0][2][SCALES[0]].shape[0])
    vid = video_id.encode("utf-8")
    parts = [
        AFF1_MAGIC,
        struct.pack("<HHH", AFF1_VERSION, 0, len(vid)),
        vid,
        struct.pack("<dQB", fps, len(frames), len(SCALES)),
        struct.pack("<3f", *SCALES),
        struct.pack("<II", d_v, 0),
    ]
    for idx, ts, visual in frames:
        parts.append(struct.pack("<QdBB", idx, ts, NO_ANNOTATION, 0))
        for s in SCALES:
            vec = np.ascontiguousarray(visual[s], dtype="<f4")
            if vec.shape != (d_v,):
                raise InputError(f"frame {idx} scale {s}: width {vec.shape} != ({d_v},)")
            parts.append(vec.tobytes())
    return b"".join(parts)


def encode_afa1(timestamps, features, hop: float) -> bytes:
    feats = np.ascontiguousarray(features, dtype="<f4")
    timestamps = np.asarray(timestamps, dtype=np.float64)
    if feats.ndim != 2 or timestamps.shape != (feats.shape[0],):
        raise InputError(f"bad track shapes {feats.shape} / {timestamps.shape}")
    parts = [AFA1_MAGIC, struct.pack("<IdQ", feats.shape[1], hop, feats.shape[0])]
    for i in range(feats.shape[0]):
        parts.append(struct.pack("<d", timestamps[i]))
        parts.append(feats[i].tobytes())
    return b"".join(parts)


def read_ppm(path) -> np.ndarray:
    """Binary P6, maxval 255, '#' comments allowed in the header."""
    with open(path, "rb") as f:
        buf = f.read()

    pos = 0
    tokens = []
    while len(tokens) < 4:
        if pos >= len(buf):
            raise InputError(f"{path}: truncated PPM header")
        ch = buf[pos : pos + 1]
        if ch == b"#":
            pos = buf.index(b"\n", pos) + 1
        elif ch.isspace():
            pos += 1
        else:
            end = pos
            while end < len(buf) and not buf[end : end + 1].isspace():
                end += 1
            tokens.append(buf[pos:end])
            pos = end
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise InputError(f"{path}: need binary P6 maxval 255, got {tokens[0]!r}/{tokens[3]!r}")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1  # single whitespace after maxval
    payload = buf[pos : pos + 3 * w * h]
    if len(payload) != 3 * w * h:
        raise InputError(f"{path}: payload {len(payload)} bytes, expected {3 * w * h}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
