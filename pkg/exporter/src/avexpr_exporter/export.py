"""Manifest-driven export of encoder features to AFF1/AFA1 files.

Inputs per manifest entry (JSON lines, one object per video):
  id         required; names the output files
  fps        optional, default 25.0; used for frame timestamps
  crops_dir  directory of face crops named <frame_index>_s<scale>.ppm,
             one per scale in {0.9, 1.2, 1.5} (the layout the consumer's
             `crop` tool produces)
  audio_wav  mono PCM16 WAV with the video's audio track

Entries without crops_dir are skipped by the visual pass, without
audio_wav by the audio pass. A frame missing any of its three scale
crops is skipped with a log line; encoder load failures abort the run.
"""

from __future__ import annotations

import json
import logging
import re
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import get_audio_encoder, get_visual_encoder
from .errors import InputError, ManifestError
from .formats import SCALES, atomic_write, encode_aff1, encode_afa1, read_ppm

log = logging.getLogger("avexpr_exporter")

_CROP_NAME = re.compile(r"^(\d+)_s([0-9.]+)\.ppm$")


@dataclass(frozen=True)
class ExportJob:
    manifest: Path
    out_dir: Path
    vision: str = "toy"
    audio: str = "toy"
    device: str = "cpu"


def read_manifest(path) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from exc
            if not isinstance(entry, dict) or "id" not in entry:
                raise ManifestError(f"{path}:{lineno}: each line needs an 'id' key")
            entries.append(entry)
    if not entries:
        raise ManifestError(f"{path}: empty manifest")
    return entries


def discover_frames(crops_dir: Path) -> list[tuple[int, dict[float, Path]]]:
    """(frame_index, {scale: crop path}) for frames with a full scale set.

    Incomplete frames are logged and dropped rather than failing the
    whole video; a typical cause is a detector miss on one scale.
    """
    by_frame: dict[int, dict[float, Path]] = {}
    for p in sorted(crops_dir.iterdir()):
        m = _CROP_NAME.match(p.name)
        if not m:
            continue
        scale = float(m.group(2))
        if scale in SCALES:
            by_frame.setdefault(int(m.group(1)), {})[scale] = p
    frames = []
    for idx in sorted(by_frame):
        have = by_frame[idx]
        if len(have) == len(SCALES):
            frames.append((idx, have))
        else:
            missing = sorted(set(SCALES) - set(have))
            log.warning("%s: frame %d missing scales %s, skipped", crops_dir, idx, missing)
    return frames


def read_wav(path) -> tuple[np.ndarray, int]:
    """Mono PCM16 WAV -> (float64 samples in [-1, 1), sample rate)."""
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1:
            raise InputError(f"{path}: expected mono audio, got {w.getnchannels()} channels")
        if w.getsampwidth() != 2:
            raise InputError(f"{path}: expected 16-bit PCM, got {8 * w.getsampwidth()}-bit")
        rate = w.getframerate()
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0, rate


def export_visual(job: ExportJob) -> list[Path]:
    encoder = get_visual_encoder(job.vision, job.device)
    base = Path(job.manifest).parent
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in read_manifest(job.manifest):
        if "crops_dir" not in entry:
            continue
        crops_dir = base / entry["crops_dir"]
        if not crops_dir.is_dir():
            raise InputError(f"{entry['id']}: crops_dir {crops_dir} is not a directory")
        fps = float(entry.get("fps", 25.0))
        frames = []
        for idx, paths in discover_frames(crops_dir):
            visual = {s: encoder.encode(read_ppm(paths[s])) for s in SCALES}
            frames.append((idx, idx / fps, visual))
        out = out_dir / f"{entry['id']}.aff1"
        written.append(atomic_write(out, encode_aff1(entry["id"], fps, frames)))
        log.info("wrote %s (%d frames, D_v=%d)", out, len(frames), encoder.dim)
    return written


def export_audio(job: ExportJob) -> list[Path]:
    encoder = get_audio_encoder(job.audio, job.device)
    base = Path(job.manifest).parent
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in read_manifest(job.manifest):
        if "audio_wav" not in entry:
            continue
        samples, rate = read_wav(base / entry["audio_wav"])
        rows = encoder.encode(samples, rate)
        timestamps = np.arange(rows.shape[0]) * encoder.hop
        out = out_dir / f"{entry['id']}.afa1"
        written.append(atomic_write(out, encode_afa1(timestamps, rows, encoder.hop)))
        log.info("wrote %s (%d steps, D_a=%d)", out, rows.shape[0], encoder.dim)
    return written


def export_all(job: ExportJob) -> list[Path]:
    return export_visual(job) + export_audio(job)
