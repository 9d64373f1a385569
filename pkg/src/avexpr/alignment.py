"""Temporal alignment of audio features to video frames, multi-scale visual
averaging, and the AFA1 audio-track file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .datamodel import SCALES, FrameRecord, VideoSequence
from .errors import CorruptionError, FormatError, ValidationError

AFA1_MAGIC = b"AFA1"


class AlignMode(Enum):
    NEAREST = "nearest"
    WINDOW_MEAN = "window"


@dataclass(frozen=True)
class AudioTrack:
    """Evenly hopped audio feature sequence: (timestamps[T], features[T,D_a])."""

    timestamps: np.ndarray
    features: np.ndarray
    hop: float

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=np.float64)
        feats = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "features", feats)
        if self.hop <= 0:
            raise ValidationError(f"hop must be > 0, got {self.hop}")
        if ts.ndim != 1 or feats.ndim != 2 or feats.shape[0] != ts.shape[0]:
            raise ValidationError("timestamps[T] and features[T,D_a] must agree on T")
        if ts.shape[0] >= 2:
            deltas = np.diff(ts)
            if np.any(deltas <= 0):
                raise ValidationError("timestamps must be strictly increasing")
            if np.any(np.abs(deltas - self.hop) > 1e-6):
                raise ValidationError("timestamp spacing must equal hop within 1e-6 s")

    def __len__(self) -> int:
        return self.timestamps.shape[0]

    @property
    def d_a(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AlignmentConfig:
    mode: AlignMode = AlignMode.WINDOW_MEAN
    window: float = 0.5

    def __post_init__(self):
        if self.mode is AlignMode.WINDOW_MEAN and self.window <= 0:
            raise ValidationError(f"window must be > 0, got {self.window}")


def align_audio(track: AudioTrack, frame_time: float, cfg: AlignmentConfig) -> np.ndarray | None:
    """Audio feature for one frame time, or None when nothing aligns.

    NEAREST picks the feature minimizing |timestamp - frame_time| (ties go
    to the earlier one). WINDOW_MEAN averages every feature with
    |timestamp - frame_time| <= window/2 and returns None when that set is
    empty.
    """
    if len(track) == 0:
        return None
    ts = track.timestamps
    if cfg.mode is AlignMode.NEAREST:
        # argmin returns the first minimizer, which is the earlier timestamp
        return track.features[int(np.argmin(np.abs(ts - frame_time)))].copy()
    half = cfg.window / 2.0
    inside = np.abs(ts - frame_time) <= half
    if not inside.any():
        return None
    return track.features[inside].mean(axis=0)


def average_multiscale(rec: FrameRecord) -> np.ndarray:
    """Elementwise mean of the three per-scale visual vectors."""
    missing = [s for s in SCALES if s not in rec.visual]
    if missing:
        raise ValidationError(f"record lacks scales {missing}")
    return np.mean([rec.visual[s] for s in SCALES], axis=0)


def build_frame_pairs(
    seq: VideoSequence, track: AudioTrack, cfg: AlignmentConfig
) -> list[tuple[np.ndarray, np.ndarray | None, int]]:
    """Per frame: (averaged visual, aligned audio or None, label), in order."""
    return [
        (average_multiscale(rec), align_audio(track, rec.timestamp, cfg), int(rec.label))
        for rec in seq.records
    ]


def pairs_from_sequence(seq: VideoSequence) -> list[tuple[np.ndarray, np.ndarray | None, int]]:
    """Frame pairs from a sequence whose audio slots are already filled."""
    return [(average_multiscale(rec), rec.audio, int(rec.label)) for rec in seq.records]


def attach_audio(seq: VideoSequence, track: AudioTrack, cfg: AlignmentConfig) -> VideoSequence:
    """Copy of `seq` with each record's audio slot filled by align_audio.

    This is the `align` pipeline stage: visual features pass through
    untouched, so the output file still carries all three scales.
    """
    records = [
        FrameRecord(
            rec.video_id,
            rec.frame_index,
            rec.timestamp,
            rec.visual,
            align_audio(track, rec.timestamp, cfg),
            rec.label,
        )
        for rec in seq.records
    ]
    return VideoSequence(seq.video_id, seq.fps, tuple(records))


# ---------------------------------------------------------------------------
# AFA1 audio-track files
# ---------------------------------------------------------------------------
#
# Little-endian: magic "AFA1" | D_a u32 | hop f64 | count u64,
# then per feature: timestamp f64 | D_a x f32.


def write_audio_track(track: AudioTrack, path) -> None:
    parts = [AFA1_MAGIC, struct.pack("<IdQ", track.d_a, track.hop, len(track))]
    feats = np.ascontiguousarray(track.features, dtype="<f4")
    for i in range(len(track)):
        parts.append(struct.pack("<d", track.timestamps[i]))
        parts.append(feats[i].tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def read_audio_track(path) -> AudioTrack:
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != AFA1_MAGIC:
        raise FormatError(f"not an AFA1 file: bad magic {buf[:4]!r}")
    try:
        d_a, hop, count = struct.unpack_from("<IdQ", buf, 4)
    except struct.error as exc:
        raise CorruptionError(f"truncated AFA1 header: {exc}") from exc
    off = 24
    rec_size = 8 + 4 * d_a
    if len(buf) - off != count * rec_size:
        raise CorruptionError(
            f"payload is {len(buf) - off} bytes, header implies {count * rec_size}"
        )
    timestamps = np.empty(count, dtype=np.float64)
    features = np.empty((count, d_a), dtype=np.float64)
    for i in range(count):
        (timestamps[i],) = struct.unpack_from("<d", buf, off)
        off += 8
        features[i] = np.frombuffer(buf, "<f4", d_a, off).astype(np.float64)
        off += 4 * d_a
    return AudioTrack(timestamps, features, hop)
