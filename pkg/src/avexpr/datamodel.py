"""Label space, per-frame feature records, the AFF1 feature-file format,
JSON-lines manifests, class weighting and fold splitting.

The AFF1 container is what decouples this toolkit from whatever encoders
produced the features; everything downstream reads only these files.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError, ValidationError
from .ndmath import Rng

AFF1_MAGIC = b"AFF1"
AFF1_VERSION = 1
SCALES = (0.9, 1.2, 1.5)
N_CLASSES = 8


class ExpressionLabel(IntEnum):
    """Fixed 8-class label space plus the unlabeled-frame sentinel."""

    NEUTRAL = 0
    ANGER = 1
    DISGUST = 2
    FEAR = 3
    HAPPINESS = 4
    SADNESS = 5
    SURPRISE = 6
    OTHER = 7
    MISSING = 255


def _coerce_label(value) -> ExpressionLabel:
    try:
        return ExpressionLabel(int(value))
    except ValueError:
        raise CorruptionError(f"label byte {value} outside {{0..7, 255}}") from None


@dataclass(frozen=True)
class FrameRecord:
    """One frame: per-scale visual vectors, optional audio vector, label.

    `visual` maps each scale in SCALES to a vector of the shared width D_v.
    `audio` is None when the frame has no aligned audio feature.
    """

    video_id: str
    frame_index: int
    timestamp: float
    visual: dict[float, np.ndarray]
    audio: np.ndarray | None
    label: ExpressionLabel

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValidationError(f"frame_index must be >= 0, got {self.frame_index}")
        if self.timestamp < 0:
            raise ValidationError(f"timestamp must be >= 0, got {self.timestamp}")
        if tuple(sorted(self.visual)) != SCALES:
            raise ValidationError(f"visual scales must be {SCALES}, got {sorted(self.visual)}")
        widths = {v.shape for v in self.visual.values()}
        if len(widths) != 1 or len(next(iter(widths))) != 1:
            raise ShapeError(f"visual vectors must be 1-D with one shared width, got {widths}")
        if self.audio is not None and self.audio.ndim != 1:
            raise ShapeError("audio must be a 1-D vector or None")

    @property
    def d_v(self) -> int:
        return self.visual[SCALES[0]].shape[0]


@dataclass(frozen=True)
class VideoSequence:
    """Ordered frames of one video at a constant frame rate."""

    video_id: str
    fps: float
    records: tuple[FrameRecord, ...]

    def __post_init__(self):
        if self.fps <= 0:
            raise ValidationError(f"fps must be > 0, got {self.fps}")
        object.__setattr__(self, "records", tuple(self.records))
        prev_idx, prev_ts = -1, -1.0
        for rec in self.records:
            if rec.video_id != self.video_id:
                raise ValidationError(f"record video_id {rec.video_id!r} != {self.video_id!r}")
            if rec.frame_index <= prev_idx:
                raise ValidationError("frame_index values must be strictly increasing")
            if rec.timestamp < prev_ts:
                raise ValidationError("timestamps must be non-decreasing")
            prev_idx, prev_ts = rec.frame_index, rec.timestamp
        d_vs = {rec.d_v for rec in self.records}
        if len(d_vs) > 1:
            raise ShapeError(f"records disagree on visual width: {sorted(d_vs)}")
        d_as = {rec.audio.shape[0] for rec in self.records if rec.audio is not None}
        if len(d_as) > 1:
            raise ShapeError(f"records disagree on audio width: {sorted(d_as)}")

    @property
    def d_v(self) -> int:
        return self.records[0].d_v if self.records else 0

    @property
    def d_a(self) -> int:
        for rec in self.records:
            if rec.audio is not None:
                return rec.audio.shape[0]
        return 0


# ---------------------------------------------------------------------------
# AFF1 feature files
# ---------------------------------------------------------------------------
#
# Little-endian layout.
#   header: magic "AFF1" | format_version u16 = 1 | flags u16 (bit0: schema
#           carries audio) | video_id_len u16 | video_id utf-8 | fps f64
#           | frame_count u64 | n_scales u8 = 3 | scales 3xf32 | D_v u32
#           | D_a u32
#   record: frame_index u64 | timestamp f64 | label u8 (255 = MISSING)
#           | audio_present u8 | visual 3*D_v f32 (scale-major, ascending)
#           | audio D_a f32 (zeros when absent)


def _encode_feature_file(seq: VideoSequence) -> bytes:
    d_v, d_a = seq.d_v, seq.d_a
    vid = seq.video_id.encode("utf-8")
    if len(vid) > 0xFFFF:
        raise ValidationError("video_id longer than 65535 bytes")
    flags = 1 if d_a > 0 else 0
    parts = [
        AFF1_MAGIC,
        struct.pack("<HHH", AFF1_VERSION, flags, len(vid)),
        vid,
        struct.pack("<dQB", seq.fps, len(seq.records), len(SCALES)),
        struct.pack("<3f", *SCALES),
        struct.pack("<II", d_v, d_a),
    ]
    zeros = np.zeros(d_a, dtype="<f4").tobytes()
    for rec in seq.records:
        present = rec.audio is not None
        parts.append(struct.pack("<QdBB", rec.frame_index, rec.timestamp, int(rec.label), int(present)))
        for s in SCALES:
            parts.append(np.ascontiguousarray(rec.visual[s], dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(rec.audio, dtype="<f4").tobytes() if present else zeros)
    return b"".join(parts)


def write_feature_file(seq: VideoSequence, path) -> None:
    """Serialize a VideoSequence to an AFF1 file.

    All validation happens while encoding in memory, so a failing call
    leaves no partial file behind.
    """
    blob = _encode_feature_file(seq)
    with open(path, "wb") as f:
        f.write(blob)


def read_feature_file(path) -> VideoSequence:
    """Decode an AFF1 file; binary32 payloads are promoted to float64."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != AFF1_MAGIC:
        raise FormatError(f"not an AFF1 file: bad magic {buf[:4]!r}")
    try:
        version, flags, id_len = struct.unpack_from("<HHH", buf, 4)
        if version != AFF1_VERSION:
            raise FormatError(f"unsupported AFF1 version {version}")
        off = 10
        video_id = buf[off : off + id_len].decode("utf-8")
        off += id_len
        fps, n_frames, n_scales = struct.unpack_from("<dQB", buf, off)
        off += 17
        scales = struct.unpack_from(f"<{n_scales}f", buf, off)
        off += 4 * n_scales
        d_v, d_a = struct.unpack_from("<II", buf, off)
        off += 8
    except struct.error as exc:
        raise CorruptionError(f"truncated AFF1 header: {exc}") from exc
    if n_scales != len(SCALES) or any(abs(a - b) > 1e-6 for a, b in zip(scales, SCALES)):
        raise CorruptionError(f"unexpected scale set {scales}")
    if bool(flags & 1) != (d_a > 0):
        raise CorruptionError(f"audio flag {flags & 1} inconsistent with D_a={d_a}")

    rec_size = 18 + 4 * (len(SCALES) * d_v + d_a)
    if len(buf) - off != n_frames * rec_size:
        raise CorruptionError(
            f"payload is {len(buf) - off} bytes, header implies {n_frames * rec_size}"
        )
    records = []
    for _ in range(n_frames):
        frame_index, timestamp, label_byte, present = struct.unpack_from("<QdBB", buf, off)
        off += 18
        if present not in (0, 1):
            raise CorruptionError(f"audio_present byte {present}")
        if present and d_a == 0:
            raise CorruptionError("record flags audio present but D_a = 0")
        visual = {}
        for s in SCALES:
            visual[s] = np.frombuffer(buf, "<f4", d_v, off).astype(np.float64)
            off += 4 * d_v
        audio = np.frombuffer(buf, "<f4", d_a, off).astype(np.float64) if present else None
        off += 4 * d_a
        records.append(
            FrameRecord(video_id, frame_index, timestamp, visual, audio, _coerce_label(label_byte))
        )
    return VideoSequence(video_id, fps, tuple(records))


# ---------------------------------------------------------------------------
# JSON-lines manifest
# ---------------------------------------------------------------------------

MANIFEST_KEYS = ("id", "path", "fps", "n_frames")


def read_manifest(path) -> list[dict]:
    """One JSON object per line, each with at least id/path/fps/n_frames."""
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"manifest line {lineno}: {exc}") from exc
            missing = [k for k in MANIFEST_KEYS if k not in obj]
            if missing:
                raise ValidationError(f"manifest line {lineno} lacks keys {missing}")
            entries.append(obj)
    return entries


def write_manifest(entries: list[dict], path) -> None:
    for entry in entries:
        missing = [k for k in MANIFEST_KEYS if k not in entry]
        if missing:
            raise ValidationError(f"manifest entry {entry.get('id')!r} lacks keys {missing}")
    with open(path, "w", encoding="utf-8") as f:
        for entry in entries:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Class weights and folds
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassWeights:
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))
        if self.w.ndim != 1 or not np.all(self.w > 0):
            raise ValidationError("class weights must be a 1-D positive vector")
        if abs(self.w.mean() - 1.0) > 1e-9:
            raise ValidationError(f"class weights must average to 1, got mean {self.w.mean()}")

    @classmethod
    def uniform(cls, n_classes: int = N_CLASSES) -> "ClassWeights":
        return cls(np.ones(n_classes))


def compute_class_weights(labels, n_classes: int = N_CLASSES) -> ClassWeights:
    """Inverse-frequency weights w_c proportional to N/(C*n_c), rescaled to mean 1.

    Classes absent from `labels` get their count clamped to 1 (with a
    warning) so the weight stays finite; MISSING labels are ignored.
    """
    counts = np.zeros(n_classes, dtype=np.int64)
    for lab in labels:
        code = int(lab)
        if code == ExpressionLabel.MISSING:
            continue
        if not 0 <= code < n_classes:
            raise ValidationError(f"label {code} outside 0..{n_classes - 1}")
        counts[code] += 1
    n = int(counts.sum())
    if n == 0:
        raise ValidationError("no non-MISSING labels to weight")
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        warnings.warn(f"classes {absent.tolist()} absent; clamping their counts to 1", stacklevel=2)
    clamped = np.maximum(counts, 1)
    raw = n / (n_classes * clamped.astype(np.float64))
    return ClassWeights(raw / raw.mean())


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignment: dict[str, int]

    def fold_videos(self, fold: int) -> list[str]:
        return sorted(v for v, f in self.assignment.items() if f == fold)


def make_folds(videos, k: int, seed: int) -> FoldSplit:
    """Deterministic k-fold split by video: sort, seeded shuffle, round-robin.

    Fold sizes differ by at most one. Duplicate ids are rejected since a
    video must live in exactly one fold.
    """
    ids = list(videos)
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate video ids")
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > len(ids):
        raise ValidationError(f"k={k} exceeds video count {len(ids)}")
    order = sorted(ids)
    perm = Rng(seed).gen.permutation(len(order))
    return FoldSplit(k, {order[int(p)]: i % k for i, p in enumerate(perm)})
