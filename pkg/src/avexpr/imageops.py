"""Pixel-space operations: multi-scale square cropping with black
out-of-bounds fill, the black-bar padding augmentation, and binary PPM I/O.

Images are uint8 arrays of shape [H, W, 3] everywhere in this module.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError
from .ndmath import Rng

SIDE_ORDER = ("left", "right", "top", "bottom")


def as_image(img) -> np.ndarray:
    a = np.asarray(img)
    if a.ndim != 3 or a.shape[2] != 3 or a.dtype != np.uint8:
        raise ValidationError(f"image must be uint8 [H,W,3], got {a.dtype} {a.shape}")
    return a


@dataclass(frozen=True)
class FaceBox:
    """Square region of interest; may extend beyond the image bounds."""

    cx: float
    cy: float
    side: float

    def __post_init__(self):
        if self.side <= 0:
            raise ValidationError(f"box side must be > 0, got {self.side}")


@dataclass(frozen=True)
class PadAugConfig:
    probability: float = 0.5
    sides: frozenset[str] = frozenset(SIDE_ORDER)
    fraction_range: tuple[float, float] = (0.05, 0.25)
    max_sides_per_sample: int = 2
    jitter: int = 2

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValidationError("probability must lie in [0,1]")
        object.__setattr__(self, "sides", frozenset(self.sides))
        if not self.sides or not self.sides <= set(SIDE_ORDER):
            raise ValidationError(f"sides must be a non-empty subset of {SIDE_ORDER}")
        lo, hi = self.fraction_range
        if not 0.0 < lo <= hi < 0.5:
            raise ValidationError(f"fraction_range must satisfy 0 < lo <= hi < 0.5, got {self.fraction_range}")
        if self.max_sides_per_sample not in (1, 2):
            raise ValidationError("max_sides_per_sample must be 1 or 2")
        if self.jitter < 0:
            raise ValidationError("jitter must be >= 0")


def _round_half_up(v: np.ndarray) -> np.ndarray:
    return np.floor(v + 0.5)


def crop_scaled(img, box: FaceBox, scale: float, out_side: int) -> np.ndarray:
    """Crop the square of side scale*box.side centered on the box, resized
    to out_side x out_side by bilinear interpolation with half-pixel sample
    centers. Source pixels outside the image read as black.
    """
    img = as_image(img)
    if scale <= 0:
        raise ValidationError(f"scale must be > 0, got {scale}")
    if out_side < 1:
        raise ValidationError(f"out_side must be >= 1, got {out_side}")
    h, w = img.shape[:2]
    s = scale * box.side
    step = s / out_side
    xs = box.cx - s / 2.0 + (np.arange(out_side) + 0.5) * step - 0.5
    ys = box.cy - s / 2.0 + (np.arange(out_side) + 0.5) * step - 0.5

    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    def gather(yy, xx):
        # out-of-range neighbors contribute black
        inside = (yy[:, None] >= 0) & (yy[:, None] < h) & (xx[None, :] >= 0) & (xx[None, :] < w)
        vals = img[np.clip(yy, 0, h - 1)[:, None], np.clip(xx, 0, w - 1)[None, :]].astype(np.float64)
        return vals * inside[..., None]

    v00 = gather(y0, x0)
    v01 = gather(y0, x0 + 1)
    v10 = gather(y0 + 1, x0)
    v11 = gather(y0 + 1, x0 + 1)
    wy = fy[:, None, None]
    wx = fx[None, :, None]
    out = (
        (1 - wy) * (1 - wx) * v00
        + (1 - wy) * wx * v01
        + wy * (1 - wx) * v10
        + wy * wx * v11
    )
    return np.clip(_round_half_up(out), 0, 255).astype(np.uint8)


def _shift_then_bar(img: np.ndarray, side: str, thickness: int, shift: int) -> np.ndarray:
    """Move content `shift` pixels away from `side`, then blacken the bar."""
    h, w = img.shape[:2]
    out = np.zeros_like(img)
    if side == "left":
        out[:, shift:] = img[:, : w - shift]
        out[:, :thickness] = 0
    elif side == "right":
        out[:, : w - shift] = img[:, shift:]
        if thickness:
            out[:, w - thickness :] = 0
    elif side == "top":
        out[shift:] = img[: h - shift]
        out[:thickness] = 0
    else:
        out[: h - shift] = img[shift:]
        if thickness:
            out[h - thickness :] = 0
    return out


def padaug(img, cfg: PadAugConfig, rng: Rng) -> np.ndarray:
    """Black boundary-bar augmentation.

    With probability cfg.probability, picks 1..max_sides_per_sample distinct
    sides, draws each bar thickness as fraction*(that dimension) with
    fraction ~ U(lo, hi), shifts the retained content up to `jitter` pixels
    away from each padded edge, and paints the bars black. Dimensions never
    change. Draw order is fixed (gate, side count, side choice, then
    fraction and shift per side in left/right/top/bottom order) so a seed
    pins the output exactly.
    """
    img = as_image(img)
    if cfg.probability <= 0.0:
        return img.copy()
    gen = rng.gen
    if gen.random() >= cfg.probability:
        return img.copy()
    candidates = sorted(cfg.sides, key=SIDE_ORDER.index)
    n_sides = int(gen.integers(1, cfg.max_sides_per_sample + 1))
    n_sides = min(n_sides, len(candidates))
    chosen = set(gen.choice(candidates, size=n_sides, replace=False))
    out = img.copy()
    lo, hi = cfg.fraction_range
    h, w = img.shape[:2]
    for side in SIDE_ORDER:
        if side not in chosen:
            continue
        fraction = gen.uniform(lo, hi)
        dim = w if side in ("left", "right") else h
        thickness = int(np.floor(fraction * dim + 0.5))
        shift = int(gen.integers(0, cfg.jitter + 1)) if cfg.jitter > 0 else 0
        out = _shift_then_bar(out, side, thickness, shift)
    return out


def force_pad(img, side: str, fraction: float) -> np.ndarray:
    """Deterministic single-side bar (no shift); the testable geometry core."""
    img = as_image(img)
    if side not in SIDE_ORDER:
        raise ValidationError(f"unknown side {side!r}")
    dim = img.shape[1] if side in ("left", "right") else img.shape[0]
    thickness = int(np.floor(fraction * dim + 0.5))
    return _shift_then_bar(img, side, thickness, 0)


# ---------------------------------------------------------------------------
# Binary PPM (P6), maxval 255
# ---------------------------------------------------------------------------


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens: list[bytes] = []
    i = 0
    while len(tokens) < 4 and i < len(data):
        if data[i : i + 1].isspace():
            i += 1
        elif data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            tokens.append(data[i:j])
            i = j
    if len(tokens) < 4 or tokens[0] != b"P6":
        raise FormatError("not a binary PPM (P6) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise FormatError(f"only maxval 255 supported, got {maxval}")
    i += 1  # single whitespace byte after maxval
    pixels = data[i : i + w * h * 3]
    if len(pixels) != w * h * 3:
        raise FormatError("PPM payload shorter than header implies")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(img, path) -> None:
    img = as_image(img)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())
