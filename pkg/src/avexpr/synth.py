"""Synthetic audio-visual datasets with controllable modality usefulness.

Two generators:

* make_ordering_dataset: piecewise-constant labels with label-flip noise;
  each frame is visually informative, acoustically informative, or pure
  noise (disjoint sets). Lets fusion-vs-unimodal and smoothing effects be
  measured without any real data.
* make_alignment_task: labels carried only by a high-rate noisy audio
  track, so averaging audio steps inside a window recovers signal that a
  nearest-step lookup cannot.

Everything is deterministic in the seed via child RNG streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .alignment import AudioTrack, write_audio_track
from .datamodel import (
    N_CLASSES,
    SCALES,
    ExpressionLabel,
    FrameRecord,
    VideoSequence,
    write_feature_file,
    write_manifest,
)
from .ndmath import Rng


@dataclass(frozen=True)
class SynthVideo:
    sequence: VideoSequence  # audio slots already filled, frame-rate hop
    track: AudioTrack  # the same audio as a standalone track


def _piecewise_labels(gen, n_frames: int, segment_len: int, n_classes: int) -> np.ndarray:
    labels = np.empty(n_frames, dtype=np.int64)
    pos, prev = 0, -1
    while pos < n_frames:
        length = int(gen.integers(max(segment_len * 2 // 3, 1), segment_len * 4 // 3 + 1))
        cls = int(gen.integers(n_classes))
        while cls == prev:
            cls = int(gen.integers(n_classes))
        labels[pos : pos + length] = cls
        prev = cls
        pos += length
    return labels


def _flip_labels(gen, labels: np.ndarray, flip_rate: float, n_classes: int) -> np.ndarray:
    out = labels.copy()
    flips = gen.random(labels.shape[0]) < flip_rate
    for i in np.flatnonzero(flips):
        alt = int(gen.integers(n_classes - 1))
        out[i] = alt if alt < out[i] else alt + 1
    return out


def make_ordering_dataset(
    seed: int,
    n_videos: int = 8,
    n_frames: int = 600,
    d_v: int = 32,
    d_a: int = 32,
    fps: float = 25.0,
    segment_len: int = 120,
    flip_rate: float = 0.15,
    missing_rate: float = 0.05,
    informative_frac: float = 0.3,
    signal_noise: float = 0.35,
) -> list[SynthVideo]:
    """Videos whose clean label is recoverable from the visual features on
    ~30% of frames, from the audio features on a disjoint ~30%, and from
    neither elsewhere. Stored labels carry flip noise plus a sprinkle of
    MISSING frames."""
    root = Rng(seed)
    proto_gen = root.child(0).gen
    proto_v = proto_gen.normal(size=(N_CLASSES, d_v))
    proto_a = proto_gen.normal(size=(N_CLASSES, d_a))

    videos = []
    for v in range(n_videos):
        gen = root.child(100 + v).gen
        clean = _piecewise_labels(gen, n_frames, segment_len, N_CLASSES)
        stored = _flip_labels(gen, clean, flip_rate, N_CLASSES)
        stored[gen.random(n_frames) < missing_rate] = int(ExpressionLabel.MISSING)

        # modality assignment per frame: 0 = visual informative, 1 = audio, 2 = neither
        assign = np.full(n_frames, 2, dtype=np.int64)
        u = gen.random(n_frames)
        assign[u < informative_frac] = 0
        assign[(u >= informative_frac) & (u < 2 * informative_frac)] = 1

        vid = f"synth{v:03d}"
        records = []
        audio_rows = np.empty((n_frames, d_a))
        for t in range(n_frames):
            visual = {}
            for s in SCALES:
                noise = gen.normal(size=d_v)
                visual[s] = (
                    proto_v[clean[t]] + signal_noise * noise if assign[t] == 0 else noise
                )
            a_noise = gen.normal(size=d_a)
            audio_rows[t] = (
                proto_a[clean[t]] + signal_noise * a_noise if assign[t] == 1 else a_noise
            )
            records.append(
                FrameRecord(
                    vid, t, t / fps, visual, audio_rows[t], ExpressionLabel(int(stored[t]))
                )
            )
        seq = VideoSequence(vid, fps, tuple(records))
        track = AudioTrack(np.arange(n_frames) / fps, audio_rows, 1.0 / fps)
        videos.append(SynthVideo(seq, track))
    return videos


def make_alignment_task(
    seed: int,
    n_videos: int = 4,
    n_frames: int = 400,
    d_v: int = 8,
    d_a: int = 24,
    fps: float = 25.0,
    hop: float = 0.02,
    segment_len: int = 120,
    flip_rate: float = 0.10,
    step_noise: float = 2.5,
) -> list[SynthVideo]:
    """Labels live only in a 50 Hz audio track whose every step is heavily
    jittered; the visual channel is pure noise. A half-second window mean
    suppresses the jitter, a nearest-step lookup inherits all of it."""
    root = Rng(seed)
    proto_a = root.child(0).gen.normal(size=(N_CLASSES, d_a))
    duration = n_frames / fps

    videos = []
    for v in range(n_videos):
        gen = root.child(100 + v).gen
        clean = _piecewise_labels(gen, n_frames, segment_len, N_CLASSES)
        stored = _flip_labels(gen, clean, flip_rate, N_CLASSES)

        phase = float(gen.uniform(0.0, hop))
        n_steps = int(np.floor((duration - phase) / hop)) + 1
        step_times = phase + np.arange(n_steps) * hop
        frame_of_step = np.clip((step_times * fps).astype(np.int64), 0, n_frames - 1)
        audio = proto_a[clean[frame_of_step]] + step_noise * gen.normal(size=(n_steps, d_a))

        vid = f"jitter{v:03d}"
        records = []
        for t in range(n_frames):
            visual = {s: gen.normal(size=d_v) for s in SCALES}
            records.append(
                FrameRecord(vid, t, t / fps, visual, None, ExpressionLabel(int(stored[t])))
            )
        seq = VideoSequence(vid, fps, tuple(records))
        videos.append(SynthVideo(seq, AudioTrack(step_times, audio, hop)))
    return videos


def emit_dataset(videos: list[SynthVideo], out_dir) -> Path:
    """Write per-video AFF1 (visual only) + AFA1 files and a manifest.

    The AFF1 files deliberately omit audio so the alignment stage has work
    to do; returns the manifest path.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for video in videos:
        seq = video.sequence
        bare = VideoSequence(
            seq.video_id,
            seq.fps,
            tuple(
                FrameRecord(r.video_id, r.frame_index, r.timestamp, r.visual, None, r.label)
                for r in seq.records
            ),
        )
        feat_path = out / f"{seq.video_id}.aff1"
        audio_path = out / f"{seq.video_id}.afa1"
        write_feature_file(bare, feat_path)
        write_audio_track(video.track, audio_path)
        entries.append(
            {
                "id": seq.video_id,
                "path": feat_path.name,
                "fps": seq.fps,
                "n_frames": len(seq.records),
                "audio": audio_path.name,
            }
        )
    manifest = out / "manifest.jsonl"
    write_manifest(entries, manifest)
    return manifest
