"""Encoder registry.

Two families:

* "toy": dependency-free, deterministic stand-ins used by the test suite
  and for pipeline dry runs. A fixed-seed random projection of crude
  image/spectrum statistics to 1024 dims. Not a model; produces stable
  bytes on every platform, nothing more.
* "dinov2" / "wav2vec2": the real pretrained encoders, loaded lazily so
  the package imports without torch installed. Install the [models]
  extra to use them.

Both families share one contract: visual encoders map an RGB uint8 image
to a (dim,) float32 vector and must be deterministic in eval mode; audio
encoders map (samples, rate) to per-step float32 rows at a fixed hop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EncoderUnavailable, InputError

TOY_DIM = 1024
TOY_HOP = 0.02  # seconds per audio step, matching the real model's stride
_TOY_SEED = 20240501


@dataclass(frozen=True)
class VisualEncoder:
    name: str
    dim: int
    encode: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class AudioEncoder:
    name: str
    dim: int
    hop: float
    encode: Callable[[np.ndarray, int], np.ndarray]


def _grid_sample(x: np.ndarray, n: int) -> np.ndarray:
    """Index-sample rows to length n; no interpolation, any input length."""
    idx = (np.arange(n) * x.shape[0]) // n
    return x[idx]


def _toy_visual() -> VisualEncoder:
    gen = np.random.default_rng(_TOY_SEED)
    W = gen.normal(0.0, 1.0 / 16.0, size=(TOY_DIM, 256))
    b = gen.normal(0.0, 0.1, size=TOY_DIM)

    def encode(img: np.ndarray) -> np.ndarray:
        img = np.asarray(img)
        if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
            raise InputError(f"expected uint8 [H,W,3] image, got {img.dtype} {img.shape}")
        gray = img.mean(axis=2) / 255.0
        pooled = _grid_sample(_grid_sample(gray, 16).T, 16).T
        return np.tanh(W @ pooled.ravel() + b).astype(np.float32)

    return VisualEncoder("toy", TOY_DIM, encode)


def _toy_audio() -> AudioEncoder:
    gen = np.random.default_rng(_TOY_SEED + 1)
    W = gen.normal(0.0, 1.0 / 8.0, size=(TOY_DIM, 64))
    b = gen.normal(0.0, 0.1, size=TOY_DIM)

    def encode(samples: np.ndarray, rate: int) -> np.ndarray:
        samples = np.asarray(samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InputError(f"expected mono samples, got shape {samples.shape}")
        step = int(round(TOY_HOP * rate))
        if step < 1:
            raise InputError(f"sample rate {rate} too low for a {TOY_HOP}s hop")
        n = samples.shape[0] // step
        rows = np.empty((n, TOY_DIM), dtype=np.float32)
        for k in range(n):
            spectrum = np.abs(np.fft.rfft(samples[k * step : (k + 1) * step]))
            rows[k] = np.tanh(W @ _grid_sample(spectrum, 64) + b)
        return rows

    return AudioEncoder("toy", TOY_DIM, TOY_HOP, encode)


def _dinov2(device: str) -> VisualEncoder:  # pragma: no cover - needs torch + weights
    try:
        import torch
    except ImportError as exc:
        raise EncoderUnavailable("dinov2 needs torch; pip install 'avexpr-exporter[models]'") from exc
    model = torch.hub.load("facebookresearch/dinov2", "dinov2_vitl14").eval().to(device)
    mean = torch.tensor([0.485, 0.456, 0.406]).view(3, 1, 1)
    std = torch.tensor([0.229, 0.224, 0.225]).view(3, 1, 1)

    def encode(img: np.ndarray) -> np.ndarray:
        x = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1).float() / 255.0
        h, w = x.shape[-2:]
        x = x[:, : h - h % 14, : w - w % 14]  # patch grid needs multiples of 14
        x = ((x - mean) / std).unsqueeze(0).to(device)
        with torch.no_grad():
            cls = model(x)  # CLS token, [1, 1024]
        return cls[0].cpu().numpy().astype(np.float32)

    return VisualEncoder("dinov2", 1024, encode)


def _wav2vec2(device: str) -> AudioEncoder:  # pragma: no cover - needs transformers + weights
    try:
        import torch
        from transformers import Wav2Vec2Model
    except ImportError as exc:
        raise EncoderUnavailable(
            "wav2vec2 needs torch+transformers; pip install 'avexpr-exporter[models]'"
        ) from exc
    model = Wav2Vec2Model.from_pretrained("facebook/wav2vec2-large-lv60").eval().to(device)

    def encode(samples: np.ndarray, rate: int) -> np.ndarray:
        if rate != 16_000:
            raise InputError(f"wav2vec2 expects 16 kHz audio, got {rate}")
        x = torch.from_numpy(np.asarray(samples, dtype=np.float32)).unsqueeze(0).to(device)
        with torch.no_grad():
            out = model(x).last_hidden_state  # final transformer layer, [1, N, 1024]
        return out[0].cpu().numpy().astype(np.float32)

    return AudioEncoder("wav2vec2", 1024, 0.02, encode)


_VISUAL = {"toy": lambda device: _toy_visual(), "dinov2": _dinov2}
_AUDIO = {"toy": lambda device: _toy_audio(), "wav2vec2": _wav2vec2}


def get_visual_encoder(name: str, device: str = "cpu") -> VisualEncoder:
    if name not in _VISUAL:
        raise EncoderUnavailable(f"unknown visual encoder {name!r}; have {sorted(_VISUAL)}")
    return _VISUAL[name](device)


def get_audio_encoder(name: str, device: str = "cpu") -> AudioEncoder:
    if name not in _AUDIO:
        raise EncoderUnavailable(f"unknown audio encoder {name!r}; have {sorted(_AUDIO)}")
    return _AUDIO[name](device)
