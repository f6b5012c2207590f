"""Augmentation catalogue, pool, seeded parameter sampling and application.

Pool files are JSON objects ``{"version": n, "methods": [{"kind", "min", "max"}]}``.
Methods in a pool are always applied in the canonical order
Zoom, Rotation, GaussianBlur, Brightness, Contrast, Saturation, Hue.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .core import check_image, check_mask, dump_json, to_gray
from .errors import ConfigError, DimensionMismatch, ValueOutOfRange
from .geometry import image_center, rotate_about, scale_about

CANONICAL_ORDER = ("Zoom", "Rotation", "GaussianBlur", "Brightness", "Contrast", "Saturation", "Hue")
GEOMETRIC = frozenset({"Zoom", "Rotation"})
_POSITIVE = frozenset({"Zoom", "Brightness", "Saturation", "Contrast"})
IDENTITY = {
    "Zoom": 1.0,
    "Rotation": 0.0,
    "GaussianBlur": 1,
    "Brightness": 1.0,
    "Contrast": 1.0,
    "Saturation": 1.0,
    "Hue": 0.0,
}


@dataclass(frozen=True)
class AugmentationMethod:
    kind: str
    min: float
    max: float

    def __post_init__(self):
        if self.kind not in CANONICAL_ORDER:
            raise ConfigError(f"unknown augmentation kind {self.kind!r}")
        if not self.min <= self.max:
            raise ConfigError(f"{self.kind}: min {self.min} > max {self.max}")
        if self.kind in _POSITIVE and self.min <= 0:
            raise ConfigError(f"{self.kind}: factors must be > 0")
        if self.kind == "Hue" and not (-0.5 <= self.min and self.max <= 0.5):
            raise ConfigError("Hue range must lie within [-0.5, 0.5]")
        if self.kind == "GaussianBlur":
            if self.min != int(self.min) or self.max != int(self.max):
                raise ConfigError("GaussianBlur bounds must be integers")
            if self.min < 1 or not self.odd_sizes():
                raise ConfigError("GaussianBlur range must contain odd sizes >= 1")

    def odd_sizes(self) -> list:
        lo, hi = int(self.min), int(self.max)
        return [k for k in range(max(lo, 1), hi + 1) if k % 2 == 1]

    def contains(self, value) -> bool:
        if self.kind == "GaussianBlur":
            return value in self.odd_sizes()
        return self.min <= value <= self.max

    def covers(self, other: "AugmentationMethod") -> bool:
        return self.kind == other.kind and self.min <= other.min and other.max <= self.max

    def to_json(self) -> dict:
        if self.kind == "GaussianBlur":
            return {"kind": self.kind, "min": int(self.min), "max": int(self.max)}
        return {"kind": self.kind, "min": float(self.min), "max": float(self.max)}

    @classmethod
    def from_json(cls, obj: dict) -> "AugmentationMethod":
        try:
            return cls(obj["kind"], obj["min"], obj["max"])
        except KeyError as exc:
            raise ConfigError(f"augmentation method missing field {exc}") from None


@dataclass(frozen=True)
class AugmentationPool:
    version: int
    methods: tuple = ()

    def __post_init__(self):
        kinds = [m.kind for m in self.methods]
        if len(set(kinds)) != len(kinds):
            raise ConfigError(f"duplicate kinds in pool: {kinds}")

    def get(self, kind: str) -> Optional[AugmentationMethod]:
        for m in self.methods:
            if m.kind == kind:
                return m
        return None

    @property
    def kinds(self) -> tuple:
        return tuple(m.kind for m in self.methods)

    def with_method(self, method: AugmentationMethod) -> "AugmentationPool":
        """New pool (version + 1) with ``method`` added or its range replaced."""
        if self.get(method.kind) is None:
            methods = self.methods + (method,)
        else:
            methods = tuple(method if m.kind == method.kind else m for m in self.methods)
        return AugmentationPool(self.version + 1, methods)

    def to_json(self) -> dict:
        return {"version": self.version, "methods": [m.to_json() for m in self.methods]}

    def dumps(self) -> str:
        return dump_json(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "AugmentationPool":
        if not isinstance(obj, dict) or "methods" not in obj:
            raise ConfigError("pool must be an object with 'version' and 'methods'")
        return cls(int(obj.get("version", 1)), tuple(AugmentationMethod.from_json(m) for m in obj["methods"]))

    @classmethod
    def loads(cls, text: str) -> "AugmentationPool":
        return cls.from_json(json.loads(text))


def default_pool() -> AugmentationPool:
    """The starting pool: rotation, brightness, saturation, contrast and hue."""
    return AugmentationPool(
        1,
        (
            AugmentationMethod("Rotation", -180.0, 180.0),
            AugmentationMethod("Brightness", 0.5, 1.5),
            AugmentationMethod("Saturation", 0.5, 1.5),
            AugmentationMethod("Contrast", 0.5, 1.5),
            AugmentationMethod("Hue", -0.5, 0.5),
        ),
    )


def empty_pool() -> AugmentationPool:
    return AugmentationPool(1, ())


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentationParams:
    values: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {k: self.values[k] for k in CANONICAL_ORDER if k in self.values}


def sample_value(method: AugmentationMethod, rng: np.random.Generator):
    if method.kind == "GaussianBlur":
        sizes = method.odd_sizes()
        return int(sizes[int(rng.integers(len(sizes)))])
    if method.min == method.max:
        return float(method.min)
    return float(rng.uniform(method.min, method.max))


def sample_params(pool: AugmentationPool, seed: int) -> AugmentationParams:
    """One uniform draw per method.

    Each kind draws from its own stream keyed by ``(seed, kind)``, so adding a
    method to a pool leaves the other methods' draws unchanged.
    """
    values = {}
    for method in pool.methods:
        rng = np.random.default_rng([seed, CANONICAL_ORDER.index(method.kind)])
        values[method.kind] = sample_value(method, rng)
    return AugmentationParams(values)


# ---------------------------------------------------------------------------
# Pixel operations
# ---------------------------------------------------------------------------

def blur_sigma(ksize: int) -> float:
    return 0.3 * ((ksize - 1) / 2.0 - 1.0) + 0.8


def gaussian_kernel(ksize: int) -> np.ndarray:
    """Normalised 1-D Gaussian taps for an odd kernel size."""
    if ksize < 1 or ksize % 2 != 1:
        raise ValueOutOfRange(f"kernel size must be odd and >= 1, got {ksize}")
    sigma = blur_sigma(ksize)
    x = np.arange(ksize, dtype=np.float64) - (ksize - 1) / 2.0
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def gaussian_blur(array: np.ndarray, ksize: int) -> np.ndarray:
    """Separable Gaussian blur over the two spatial axes, reflected border.

    Float input gives float output; uint8 input is rounded back to uint8.
    """
    k = gaussian_kernel(ksize)
    src = array.astype(np.float64)
    out = ndimage.correlate1d(src, k, axis=0, mode="reflect")
    out = ndimage.correlate1d(out, k, axis=1, mode="reflect")
    if array.dtype == np.uint8:
        return np.clip(np.rint(out), 0, 255).astype(np.uint8)
    return out


def _to_u8(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(values), 0, 255).astype(np.uint8)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB -> HSV on floats in [0, 1]; hue as a fraction of the circle."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.where(maxc > 0, maxc, 1), 0.0)
    safe = np.where(delta > 0, delta, 1)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, maxc], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(np.int64) % 6
    choices = [
        np.stack([v, t, p], -1),
        np.stack([q, v, p], -1),
        np.stack([p, v, t], -1),
        np.stack([p, q, v], -1),
        np.stack([t, p, v], -1),
        np.stack([v, p, q], -1),
    ]
    out = np.zeros(hsv.shape, dtype=np.float64)
    for idx, c in enumerate(choices):
        out = np.where((i == idx)[..., None], c, out)
    return out


def _brightness(image, v):
    return _to_u8(image.astype(np.float64) * v)


def _contrast(image, v):
    mean = to_gray(image).mean()
    return _to_u8((image.astype(np.float64) - mean) * v + mean)


def _saturation(image, v):
    gray = to_gray(image)[..., None]
    return _to_u8(gray + (image.astype(np.float64) - gray) * v)


def _hue(image, v):
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + v) % 1.0
    return _to_u8(hsv_to_rgb(hsv) * 255.0)


_PHOTOMETRIC = {
    "Brightness": _brightness,
    "Contrast": _contrast,
    "Saturation": _saturation,
    "Hue": _hue,
}


def apply(method: AugmentationMethod, value, image: np.ndarray, mask: Optional[np.ndarray] = None):
    """Apply one method with a concrete ``value``; returns ``(image, mask)``.

    Geometric kinds move image (bilinear) and mask (nearest) together on the
    same canvas, filling with black/false. Photometric kinds leave the mask
    untouched. Identity values are exact no-ops.
    """
    check_image(image)
    if mask is not None:
        check_mask(mask)
        if mask.shape != image.shape[:2]:
            raise DimensionMismatch(f"mask {mask.shape} vs image {image.shape[:2]}")
    if not method.contains(value):
        raise ValueOutOfRange(f"{method.kind} value {value} outside [{method.min}, {method.max}]")
    if value == IDENTITY[method.kind]:
        return image, mask

    kind = method.kind
    if kind in GEOMETRIC:
        center = image_center(image.shape)
        if kind == "Zoom":
            fn = lambda a, order: scale_about(a, float(value), center, order)  # noqa: E731
        else:
            fn = lambda a, order: rotate_about(a, float(value), center, order)  # noqa: E731
        return fn(image, 1), (None if mask is None else fn(mask, 0))
    if kind == "GaussianBlur":
        return gaussian_blur(image, int(value)), mask
    return _PHOTOMETRIC[kind](image, float(value)), mask


def apply_params(pool: AugmentationPool, params: AugmentationParams, image, mask):
    for kind in CANONICAL_ORDER:
        method = pool.get(kind)
        if method is not None:
            image, mask = apply(method, params.values[kind], image, mask)
    return image, mask


def apply_pipeline(pool: AugmentationPool, seed: int, image: np.ndarray, mask: np.ndarray):
    """Sample parameters from ``pool`` and apply them in canonical order."""
    check_image(image)
    check_mask(mask, like=image)
    params = sample_params(pool, seed)
    out_image, out_mask = apply_params(pool, params, image, mask)
    return out_image, out_mask, params


def laplacian_variance(image: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian of the grayscale image."""
    gray = to_gray(image) if image.ndim == 3 else image.astype(np.float64)
    if min(gray.shape) < 3:
        return 0.0
    lap = (
        gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:] - 4.0 * gray[1:-1, 1:-1]
    )
    return float(lap.var())
