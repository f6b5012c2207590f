"""Synthetic code-like images with exact ground-truth masks.

Each image holds one code: a box of dots, a row of seven-segment digits of two
sizes and a few lines of dots ending in a vertical dot stripe, printed dark on
a lighter value-noise background. Factory F1 prints larger, denser dots than
F2, which is what the stub classifier keys on. Some samples carry a carved
ridge running parallel to the code a few pixels away; it is not part of the
code and is excluded from the mask.

Geometry is in pixels at zoom 1 regardless of canvas size.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .augment import gaussian_blur
from .core import (
    DatasetManifest,
    SampleRecord,
    atomic_write_text,
    derive_seed,
    dump_json,
    save_image,
    save_mask,
)
from .geometry import rotation_matrix

CODE_HEIGHT = 20.0
MASK_PAD = 0.5
RIDGE_GAP = 5.0
RIDGE_WIDTH = 3.0
RIDGE_OVERHANG = 0.25  # fraction of the code length the ridge extends past each end
ELEMENT_GAP = 2.5
INK_DEPTH = 150.0
_SS_UNIT = 8  # bitmap samples per code unit
_SS_PIXEL = 4  # subpixel samples per axis when rasterising


@dataclass(frozen=True)
class DotStyle:
    box_n: int
    box_pitch: float
    radius: float
    line_pitch: float


STYLES = {
    "F1": DotStyle(box_n=4, box_pitch=5.0, radius=2.4, line_pitch=5.0),
    "F2": DotStyle(box_n=3, box_pitch=6.5, radius=2.0, line_pitch=6.5),
}

# Seven-segment layout: a, b, c, d, e, f, g
_SEGMENTS = {
    "0": "abcdef", "2": "abdeg", "3": "abcdg", "5": "acdfg", "6": "acdefg", "9": "abcdfg",
}
_DIGITS = tuple(_SEGMENTS)
# (width, height) of each glyph slot; two big digits then two small ones
_GLYPHS = ((10.0, 20.0), (10.0, 20.0), (7.0, 18.0), (7.0, 18.0))
_STROKE = 2.5
_LINE_LENGTH = 28.0
_STRIPE_DOTS = 5


@dataclass(frozen=True)
class SynthSpec:
    count: int
    angle_range: tuple = (-60.0, 60.0)
    zoom_range: tuple = (0.9, 1.1)
    contrast_range: tuple = (0.9, 1.1)
    blur_range: tuple = (1, 1)
    style_mix: float = 0.5
    seed: int = 0
    size: int = 512
    split: str = "test"
    prefix: str = "s"
    ridge_prob: float = 0.5

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        for name in ("angle_range", "zoom_range", "contrast_range", "blur_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: min {lo} > max {hi}")
        if self.zoom_range[0] <= 0:
            raise ValueError("zoom must be > 0")
        if not self.blur_odd_sizes():
            raise ValueError("blur_range must contain an odd kernel size >= 1")
        if not 0.0 <= self.style_mix <= 1.0:
            raise ValueError("style_mix must lie in [0, 1]")
        if not 0.0 <= self.ridge_prob <= 1.0:
            raise ValueError("ridge_prob must lie in [0, 1]")
        if self.size < 32:
            raise ValueError("size must be >= 32")

    def blur_odd_sizes(self) -> list:
        lo, hi = int(math.ceil(self.blur_range[0])), int(math.floor(self.blur_range[1]))
        return [k for k in range(max(lo, 1), hi + 1) if k % 2 == 1]

    def to_json(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        obj = dict(obj)
        for k in ("angle_range", "zoom_range", "contrast_range", "blur_range"):
            if k in obj:
                obj[k] = tuple(obj[k])
        return cls(**obj)


# ---------------------------------------------------------------------------
# Code layout in code units (1 unit = 1 px at zoom 1)
# ---------------------------------------------------------------------------

def _layout(style: DotStyle, digits: str):
    """Return (dots, rects, length): dots as (u, v, r), rects as (u0, v0, u1, v1)."""
    dots, rects = [], []
    r = style.radius
    extent = 2 * r + style.box_pitch * (style.box_n - 1)
    off = (CODE_HEIGHT - extent) / 2.0 + r
    for i in range(style.box_n):
        for j in range(style.box_n):
            dots.append((r + i * style.box_pitch, off + j * style.box_pitch, r))
    u = extent + ELEMENT_GAP

    for digit, (gw, gh) in zip(digits, _GLYPHS):
        v0 = CODE_HEIGHT - gh
        s = _STROKE
        mid = v0 + (gh - s) / 2.0
        seg = {
            "a": (u, v0, u + gw, v0 + s),
            "b": (u + gw - s, v0, u + gw, mid + s),
            "c": (u + gw - s, mid, u + gw, v0 + gh),
            "d": (u, v0 + gh - s, u + gw, v0 + gh),
            "e": (u, mid, u + s, v0 + gh),
            "f": (u, v0, u + s, mid + s),
            "g": (u, mid, u + gw, mid + s),
        }
        rects.extend(seg[name] for name in _SEGMENTS[digit])
        u += gw + ELEMENT_GAP

    n_line = int(math.floor((_LINE_LENGTH - 2 * r) / style.line_pitch)) + 1
    for row in (off + j * style.box_pitch for j in range(style.box_n)):
        for k in range(n_line):
            dots.append((u + r + k * style.line_pitch, row, r))
    u += r + (n_line - 1) * style.line_pitch + r + ELEMENT_GAP

    stripe_pitch = (CODE_HEIGHT - 2 * r) / (_STRIPE_DOTS - 1)
    for k in range(_STRIPE_DOTS):
        dots.append((u + r, r + k * stripe_pitch, r))
    u += 2 * r
    return dots, rects, u


def _render_bitmap(dots, rects, length: float, ridge: bool):
    """Binary ink bitmap in code units; rows span [v_min, v_max)."""
    v_min = -MASK_PAD
    v_max = CODE_HEIGHT + RIDGE_GAP + RIDGE_WIDTH + MASK_PAD
    over = RIDGE_OVERHANG * length if ridge else 0.0
    u_min, u_max = -MASK_PAD - over, length + MASK_PAD + over
    n_u = int(math.ceil((u_max - u_min) * _SS_UNIT))
    n_v = int(math.ceil((v_max - v_min) * _SS_UNIT))
    uu = u_min + (np.arange(n_u) + 0.5) / _SS_UNIT
    vv = v_min + (np.arange(n_v) + 0.5) / _SS_UNIT
    ink = np.zeros((n_v, n_u), dtype=bool)
    for (u0, v0, u1, v1) in rects:
        ink[np.ix_((vv >= v0) & (vv < v1), (uu >= u0) & (uu < u1))] = True
    for (cu, cv, r) in dots:
        cols = np.flatnonzero(np.abs(uu - cu) <= r)
        rows = np.flatnonzero(np.abs(vv - cv) <= r)
        if cols.size == 0 or rows.size == 0:
            continue
        du = uu[cols][None, :] - cu
        dv = vv[rows][:, None] - cv
        ink[np.ix_(rows, cols)] |= (du * du + dv * dv) <= r * r
    if ridge:
        v0 = CODE_HEIGHT + RIDGE_GAP
        ink[np.ix_((vv >= v0) & (vv < v0 + RIDGE_WIDTH), (uu >= -over) & (uu < length + over))] = True
    return ink, (u_min, v_min)


def _value_noise(rng, shape, cells: int) -> np.ndarray:
    h, w = shape
    grid = rng.random((cells + 1, cells + 1))
    out = ndimage.zoom(grid, ((h + 1) / (cells + 1), (w + 1) / (cells + 1)), order=3, mode="nearest")
    return out[:h, :w]


def _background(rng, size: int) -> np.ndarray:
    coarse = _value_noise(rng, (size, size), 4)
    fine = _value_noise(rng, (size, size), max(8, size // 8))
    base = 185.0 + 24.0 * (coarse - 0.5) + 12.0 * (fine - 0.5)
    tint = np.array([1.0, 0.97, 0.93]) * rng.uniform(0.98, 1.02)
    return base[..., None] * tint[None, None, :]


def render_sample(size: int, angle_deg: float, zoom: float, style: str, contrast: float,
                  blur: int, ridge: bool, rng: np.random.Generator):
    """Render one image and its mask; returns ``(image, mask, extras)``."""
    digits = "".join(rng.choice(_DIGITS, size=len(_GLYPHS)))
    dots, rects, length = _layout(STYLES[style], digits)
    ink_bitmap, (u_min, v_min) = _render_bitmap(dots, rects, length, ridge)

    # Keep the code and ridge inside the canvas.
    half_u = (length * (0.5 + (RIDGE_OVERHANG if ridge else 0.0)) + MASK_PAD) * zoom
    half_v = (CODE_HEIGHT / 2.0 + RIDGE_GAP + RIDGE_WIDTH + MASK_PAD) * zoom
    t = math.radians(angle_deg)
    ext_x = half_u * abs(math.cos(t)) + half_v * abs(math.sin(t))
    ext_y = half_u * abs(math.sin(t)) + half_v * abs(math.cos(t))
    lim_x = max(0.0, (size - 1) / 2.0 - ext_x - 4.0)
    lim_y = max(0.0, (size - 1) / 2.0 - ext_y - 4.0)
    cx = (size - 1) / 2.0 + rng.uniform(-lim_x, lim_x)
    cy = (size - 1) / 2.0 + rng.uniform(-lim_y, lim_y)

    # canvas (x, y) -> code units (u, v); code centre sits at (length/2, H/2)
    inv = rotation_matrix(-angle_deg) / zoom
    anchor = np.array([length / 2.0, CODE_HEIGHT / 2.0])

    def to_code(px, py):
        dx, dy = px - cx, py - cy
        u = inv[0, 0] * dx + inv[0, 1] * dy + anchor[0]
        v = inv[1, 0] * dx + inv[1, 1] * dy + anchor[1]
        return u, v

    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    u, v = to_code(xs, ys)
    mask = (u >= -MASK_PAD) & (u <= length + MASK_PAD) & (v >= -MASK_PAD) & (v <= CODE_HEIGHT + MASK_PAD)

    # Ink coverage by subpixel sampling over the region the bitmap can reach.
    reach = (math.hypot(length * (1 + 2 * RIDGE_OVERHANG), CODE_HEIGHT + RIDGE_GAP + RIDGE_WIDTH) / 2.0
             + 2 * MASK_PAD + RIDGE_GAP) * zoom + 2
    x0, x1 = max(0, int(cx - reach)), min(size, int(cx + reach) + 1)
    y0, y1 = max(0, int(cy - reach)), min(size, int(cy + reach) + 1)
    offs = (np.arange(_SS_PIXEL) + 0.5) / _SS_PIXEL - 0.5
    sy, sx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    cover = np.zeros(sy.shape)
    n_v, n_u = ink_bitmap.shape
    for oy in offs:
        for ox in offs:
            su, sv = to_code(sx + ox, sy + oy)
            iu = np.floor((su - u_min) * _SS_UNIT).astype(np.int64)
            iv = np.floor((sv - v_min) * _SS_UNIT).astype(np.int64)
            ok = (iu >= 0) & (iu < n_u) & (iv >= 0) & (iv < n_v)
            hit = np.zeros(sy.shape, dtype=bool)
            hit[ok] = ink_bitmap[iv[ok], iu[ok]]
            cover += hit
    cover /= _SS_PIXEL * _SS_PIXEL
    coverage = np.zeros((size, size))
    coverage[y0:y1, x0:x1] = cover

    bg = _background(rng, size)
    ink = INK_DEPTH * contrast
    img = bg - coverage[..., None] * ink
    img += rng.normal(0.0, 3.0, img.shape)
    img = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    if blur > 1:
        img = gaussian_blur(img, blur)
    extras = {"digits": digits, "center": [cx, cy], "length": length}
    return img, mask, extras


def code_mask_area(style: str, zoom: float) -> float:
    """Continuous area of the ground-truth rectangle at a given zoom."""
    _, _, length = _layout(STYLES[style], "0" * len(_GLYPHS))
    return (length + 2 * MASK_PAD) * (CODE_HEIGHT + 2 * MASK_PAD) * zoom * zoom


def generate_synthetic(spec: SynthSpec, out_dir, name: str = None) -> DatasetManifest:
    """Write images, masks, sidecars and ``manifest.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    img_dir, mask_dir = out_dir / "images", out_dir / "masks"
    img_dir.mkdir(parents=True, exist_ok=True)
    mask_dir.mkdir(parents=True, exist_ok=True)
    blur_sizes = spec.blur_odd_sizes()
    records = []
    for i in range(spec.count):
        sid = f"{spec.prefix}{i:05d}"
        seed = derive_seed(spec.seed, sid)
        rng = np.random.default_rng(seed)
        style = "F1" if rng.random() < spec.style_mix else "F2"
        angle = float(rng.uniform(*spec.angle_range))
        zoom = float(rng.uniform(*spec.zoom_range))
        contrast = float(rng.uniform(*spec.contrast_range))
        blur = int(blur_sizes[int(rng.integers(len(blur_sizes)))])
        ridge = bool(rng.random() < spec.ridge_prob)
        image, mask, extras = render_sample(spec.size, angle, zoom, style, contrast, blur, ridge, rng)

        image_path = img_dir / f"{sid}.png"
        mask_path = mask_dir / f"{sid}.png"
        save_image(image_path, image)
        save_mask(mask_path, mask)
        meta = {
            "angle_deg": angle,
            "zoom": zoom,
            "style": style,
            "seed": seed,
            "contrast": contrast,
            "blur": blur,
            "ridge": ridge,
            "digits": extras["digits"],
        }
        atomic_write_text(img_dir / f"{sid}.meta.json", dump_json(meta))
        records.append(SampleRecord(sid, image_path, mask_path, style, spec.split))

    manifest = DatasetManifest(name or out_dir.name, tuple(records))
    manifest.save(out_dir / "manifest.jsonl")
    atomic_write_text(out_dir / "synth_spec.json", dump_json(spec.to_json()))
    return manifest


def load_meta(image_path) -> dict:
    p = Path(image_path)
    return json.loads(p.with_name(p.stem + ".meta.json").read_text())
