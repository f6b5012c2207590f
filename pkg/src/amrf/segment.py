"""Segmenter adapters: a classical threshold baseline and a stored-mask oracle.

Adapters expose ``name``, ``segment(sample) -> mask`` and ``fit(pairs)``
returning a new adapter (never mutating). ``sample`` is a
:class:`amrf.core.Sample`; the baseline only looks at its image, the oracle
returns the sample's reference mask or reads it from ``mask_dir``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import cv2
import numpy as np
from scipy import ndimage

from .core import Sample, check_image, check_mask, derive_seed, load_mask, parallel_map, to_gray
from .errors import ConfigError, EmptyTrainingSet, MaskNotFound, NoRegionFound
from .metrics import iou

THRESHOLD_GRID = ("otsu", 64, 96, 128)
KERNEL_GRID = (1, 3, 5, 7)
AREA_GRID = (50, 200, 800)
BACKGROUND_LEVEL = 180.0

_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class SegmenterConfig:
    threshold: Union[str, int] = "otsu"
    polarity: str = "dark_on_light"
    close_kernel: int = 5
    min_region_area: int = 50

    def __post_init__(self):
        if self.threshold != "otsu" and not (isinstance(self.threshold, int) and 0 <= self.threshold <= 255):
            raise ConfigError(f"threshold must be 'otsu' or an int in [0, 255], got {self.threshold!r}")
        if self.polarity not in ("dark_on_light", "light_on_dark"):
            raise ConfigError(f"unknown polarity {self.polarity!r}")
        if self.close_kernel < 1 or self.close_kernel % 2 != 1:
            raise ConfigError("close_kernel must be odd and >= 1")
        if self.min_region_area < 1:
            raise ConfigError("min_region_area must be >= 1")

    def to_json(self) -> dict:
        if self.threshold == "otsu":
            mode = {"threshold_mode": "otsu"}
        else:
            mode = {"threshold_mode": "fixed", "fixed_level": int(self.threshold)}
        return {**mode, "polarity": self.polarity, "close_kernel": self.close_kernel,
                "min_region_area": self.min_region_area}

    @classmethod
    def from_json(cls, obj: dict) -> "SegmenterConfig":
        mode = obj.get("threshold_mode", "otsu")
        if mode == "otsu":
            threshold = "otsu"
        elif mode == "fixed":
            threshold = int(obj["fixed_level"])
        else:
            raise ConfigError(f"unknown threshold_mode {mode!r}")
        return cls(
            threshold=threshold,
            polarity=obj.get("polarity", "dark_on_light"),
            close_kernel=int(obj.get("close_kernel", 5)),
            min_region_area=int(obj.get("min_region_area", 50)),
        )


def otsu_level(gray_u8: np.ndarray) -> int:
    """Otsu threshold: pixels <= level form the lower class."""
    hist = np.bincount(gray_u8.ravel(), minlength=256).astype(np.float64)
    total = hist.sum()
    levels = np.arange(256, dtype=np.float64)
    w0 = np.cumsum(hist)
    w1 = total - w0
    s0 = np.cumsum(hist * levels)
    mu0 = s0 / np.where(w0 > 0, w0, 1)
    mu1 = (s0[-1] - s0) / np.where(w1 > 0, w1, 1)
    between = w0 * w1 * (mu0 - mu1) ** 2
    between[(w0 == 0) | (w1 == 0)] = -1.0
    return int(np.argmax(between))


def _fill_region(image: np.ndarray) -> np.ndarray:
    """Flat areas connected to the border, i.e. fill left by geometric transforms.

    Black fill stays perfectly uniform after photometric changes (it may turn
    grey under contrast), so it shows up as pixels identical to all eight
    neighbours. Only flat components touching the border count; the result is
    dilated by one pixel to drop the bilinear seam.
    """
    packed = (image[..., 0].astype(np.int32) << 16) | (image[..., 1].astype(np.int32) << 8) | image[..., 2]
    h, w = packed.shape
    ref = packed[1:-1, 1:-1]
    flat = np.ones(ref.shape, dtype=bool)
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy or dx:
                flat &= packed[1 + dy:h - 1 + dy, 1 + dx:w - 1 + dx] == ref
    flat = np.pad(flat, 1, mode="edge")
    if not flat.any():
        return flat
    labels, _ = ndimage.label(flat, structure=_EIGHT)
    edge = np.concatenate([labels[0], labels[-1], labels[:, 0], labels[:, -1]])
    keep = np.unique(edge[edge > 0])
    if keep.size == 0:
        return np.zeros_like(flat)
    return ndimage.binary_dilation(np.isin(labels, keep), structure=_EIGHT)


def _prepare(image: np.ndarray):
    """Normalised grayscale plus a validity map.

    Transform fill (see :func:`_fill_region`) is invalid. Gray levels are
    scaled so the median valid pixel lands on ``BACKGROUND_LEVEL``, which
    makes fixed thresholds brightness-invariant.
    """
    gray = to_gray(image)
    valid = ~_fill_region(image)
    if valid.any():
        median = float(np.median(gray[valid]))
        if median > 0:
            gray = gray * (BACKGROUND_LEVEL / median)
    return np.clip(np.rint(gray), 0, 255).astype(np.uint8), valid


def _threshold(gray, valid, threshold, polarity) -> np.ndarray:
    if threshold == "otsu":
        vals = gray[valid]
        level = otsu_level(vals) if vals.size else 127
        dark = gray <= level
        light = gray > level
    else:
        dark = gray < threshold
        light = gray > threshold
    fg = dark if polarity == "dark_on_light" else light
    return fg & valid


def disk(diameter: int) -> np.ndarray:
    """Disk footprint ``x^2 + y^2 <= r^2`` with ``r = (diameter - 1) / 2``."""
    r = (diameter - 1) / 2.0
    y, x = np.mgrid[-r:r + 1, -r:r + 1]
    return (x * x + y * y <= r * r + 1e-9).astype(np.uint8)


def _dilate(binary: np.ndarray, diameter: int) -> np.ndarray:
    return cv2.dilate(binary.view(np.uint8), disk(diameter), borderType=cv2.BORDER_CONSTANT, borderValue=0)


def _closings(binary: np.ndarray, kernels) -> dict:
    """Closings with disks of diameter ``k`` for each ``k`` in ``kernels``.

    A disk is isotropic, so the reach of the closing does not depend on the
    code's rotation. Outside the image counts as background.
    """
    out = {}
    pad = max(kernels)
    padded = np.pad(binary, pad).view(np.uint8)
    for k in kernels:
        if k == 1:
            out[k] = binary
            continue
        fp = disk(k)
        dil = cv2.dilate(padded, fp, borderType=cv2.BORDER_CONSTANT, borderValue=0)
        closed = cv2.erode(dil, fp, borderType=cv2.BORDER_CONSTANT, borderValue=0)
        out[k] = closed[pad:-pad, pad:-pad].astype(bool)
    return out


def _box(mask: np.ndarray, grow: int, shape):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return (slice(max(0, rows[0] - grow), min(shape[0], rows[-1] + grow + 1)),
            slice(max(0, cols[0] - grow), min(shape[1], cols[-1] + grow + 1)))


def _region(closed: np.ndarray, k: int):
    """Largest 8-connected component merged with components within reach.

    Components closer to the largest one than ``k // 2 + 1`` pixels are
    merged in. Returns ``(mask, largest_area)``; mask is None when there is
    no foreground.
    """
    labels, n = ndimage.label(closed, structure=_EIGHT)
    if n == 0:
        return None, 0
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    main = int(np.argmax(sizes))
    region = labels == main
    if n > 1:
        reach = k // 2 + 1
        win = _box(region, reach, region.shape)
        near = _dilate(region[win], 2 * reach + 1).astype(bool)
        touched = np.unique(labels[win][near & (labels[win] > 0)])
        region = np.isin(labels, touched)
    # Holes cannot extend past the region's bounding box.
    win = _box(region, 1, region.shape)
    filled = np.zeros_like(region)
    filled[win] = ndimage.binary_fill_holes(region[win])
    return filled, int(sizes[main])


def baseline_segment(config: SegmenterConfig, image: np.ndarray) -> np.ndarray:
    """Threshold, close, keep the largest region (plus neighbours), fill holes."""
    check_image(image)
    gray, valid = _prepare(image)
    k = config.close_kernel
    closed = _closings(_threshold(gray, valid, config.threshold, config.polarity), (k,))[k]
    region, area = _region(closed, k)
    if region is None or area < config.min_region_area:
        raise NoRegionFound(f"no component with area >= {config.min_region_area} (largest {area})")
    return region


def fit_grid(polarity: str = "dark_on_light") -> list:
    return [
        SegmenterConfig(t, polarity, k, a)
        for t, k, a in itertools.product(THRESHOLD_GRID, KERNEL_GRID, AREA_GRID)
    ]


def _pair_scores(args) -> np.ndarray:
    """IoU of every grid cell on one training pair, in grid order."""
    image, mask, polarity = args
    gray, valid = _prepare(image)
    out = []
    for t in THRESHOLD_GRID:
        closings = _closings(_threshold(gray, valid, t, polarity), KERNEL_GRID)
        for k in KERNEL_GRID:
            region, area = _region(closings[k], k)
            score = 0.0 if region is None else iou(region, mask)
            out.extend(score if area >= a else 0.0 for a in AREA_GRID)
    return np.asarray(out)


def baseline_fit(config: SegmenterConfig, pairs: Sequence, jobs: int = 1) -> SegmenterConfig:
    """Grid search maximising mean IoU over ``(image, mask)`` pairs.

    Ties go to the earliest grid cell (threshold, then kernel, then area in
    declared order). Polarity is taken from ``config``.
    """
    if not pairs:
        raise EmptyTrainingSet("baseline_fit needs at least one (image, mask) pair")
    for image, mask in pairs:
        check_image(image)
        check_mask(mask, like=image)
    scores = parallel_map(_pair_scores, [(img, m, config.polarity) for img, m in pairs], jobs)
    mean = np.mean(np.stack(scores), axis=0)
    best = int(np.argmax(mean))  # argmax returns the first maximum
    return fit_grid(config.polarity)[best]


def oracle_segment(mask_dir, sample_id: str, perturb: int = 0, seed: int = 0) -> np.ndarray:
    """Stored mask for ``sample_id``; optionally eroded/dilated by up to ``perturb`` px."""
    path = Path(mask_dir) / f"{sample_id}.png"
    if not path.exists():
        raise MaskNotFound(f"no mask for {sample_id!r} in {mask_dir}")
    return perturb_mask(load_mask(path), perturb, derive_seed(seed, sample_id))


def perturb_mask(mask: np.ndarray, perturb: int, seed: int) -> np.ndarray:
    if perturb <= 0:
        return mask
    rng = np.random.default_rng(seed)
    step = int(rng.integers(-perturb, perturb + 1))
    if step > 0:
        return ndimage.binary_dilation(mask, structure=_EIGHT, iterations=step)
    if step < 0:
        out = ndimage.binary_erosion(mask, structure=_EIGHT, iterations=-step)
        return out if out.any() else mask
    return mask


# ---------------------------------------------------------------------------
# Adapters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BaselineSegmenter:
    config: SegmenterConfig = SegmenterConfig()
    name: str = "baseline"

    def segment(self, sample: Sample) -> np.ndarray:
        return baseline_segment(self.config, sample.image)

    def fit(self, pairs: Sequence, jobs: int = 1) -> "BaselineSegmenter":
        return replace(self, config=baseline_fit(self.config, pairs, jobs))

    def describe(self) -> dict:
        return {"adapter": self.name, "config": self.config.to_json()}


@dataclass(frozen=True)
class OracleSegmenter:
    """Frozen reference: returns stored masks, never learns."""

    mask_dir: Optional[Path] = None
    perturb: int = 0
    seed: int = 0
    name: str = "oracle"

    def segment(self, sample: Sample) -> np.ndarray:
        if sample.mask is not None:
            return perturb_mask(sample.mask, self.perturb, derive_seed(self.seed, sample.id))
        if self.mask_dir is None:
            raise MaskNotFound(f"no reference mask for {sample.id!r}")
        return oracle_segment(self.mask_dir, sample.id, self.perturb, self.seed)

    def fit(self, pairs: Sequence, jobs: int = 1) -> "OracleSegmenter":
        return self

    def describe(self) -> dict:
        return {"adapter": self.name, "mask_dir": None if self.mask_dir is None else str(self.mask_dir),
                "perturb": self.perturb}


def segmenter_from_json(obj: dict, base_dir: Optional[Path] = None):
    """Build an adapter from ``{"adapter": "baseline"|"oracle", ...}``."""
    kind = obj.get("adapter", "baseline")
    if kind == "baseline":
        return BaselineSegmenter(SegmenterConfig.from_json(obj.get("config", {})))
    if kind == "oracle":
        mask_dir = obj.get("mask_dir")
        if mask_dir is not None:
            mask_dir = Path(mask_dir)
            if base_dir is not None and not mask_dir.is_absolute():
                mask_dir = base_dir / mask_dir
        return OracleSegmenter(mask_dir, int(obj.get("perturb", 0)), int(obj.get("seed", 0)))
    raise ConfigError(f"unknown segmenter adapter {kind!r}")
