"""Image moments, mask orientation and angle-adaptive cropping.

The orientation of a mask is the angle of its principal axis,

    alpha = 0.5 * atan2(2 * cmu11, cmu20 - cmu02)

in degrees, folded into (-90, 90]. Angles follow the convention documented in
:mod:`amrf.geometry`: positive turns +x towards +y (y grows downwards), i.e.
clockwise on screen. A perfectly isotropic mask (cmu11 == 0 and
cmu20 == cmu02) gets alpha = 0 through ``atan2(0, 0) == 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core import check_image, check_mask
from .errors import DimensionMismatch, EmptyMask
from .geometry import rotation_matrix, warp


@dataclass(frozen=True)
class MomentSet:
    m00: int
    m10: int
    m01: int
    m11: int
    m20: int
    m02: int
    mu_x: float
    mu_y: float
    cmu11: float
    cmu20: float
    cmu02: float


def _raw_moments(mask: np.ndarray):
    ys, xs = np.nonzero(mask)
    xs = xs.astype(np.int64)
    ys = ys.astype(np.int64)
    return (
        int(xs.size),
        int(xs.sum()),
        int(ys.sum()),
        int((xs * ys).sum()),
        int((xs * xs).sum()),
        int((ys * ys).sum()),
    )


def compute_moments(mask: np.ndarray) -> MomentSet:
    """Raw moments up to second order, centroid and central second moments.

    Raw moments are exact integer sums over true pixels. Central moments are
    normalised by the area, evaluated from exact integer numerators so the
    only rounding is the final division.
    """
    check_mask(mask)
    m00, m10, m01, m11, m20, m02 = _raw_moments(mask)
    if m00 == 0:
        raise EmptyMask("mask has no true pixels")
    den = m00 * m00
    return MomentSet(
        m00=m00, m10=m10, m01=m01, m11=m11, m20=m20, m02=m02,
        mu_x=m10 / m00,
        mu_y=m01 / m00,
        cmu11=float(Fraction(m00 * m11 - m10 * m01, den)),
        cmu20=float(Fraction(m00 * m20 - m10 * m10, den)),
        cmu02=float(Fraction(m00 * m02 - m01 * m01, den)),
    )


def normalize_angle(angle_deg: float) -> float:
    """Fold an axis angle into (-90, 90]."""
    a = math.fmod(angle_deg, 180.0)
    if a <= -90.0:
        a += 180.0
    elif a > 90.0:
        a -= 180.0
    return a + 0.0


def orientation_angle(moments: MomentSet) -> float:
    if moments.m00 <= 0:
        raise EmptyMask("orientation of an empty mask")
    # + 0.0 turns a negative zero into +0 so atan2 cannot return -pi.
    alpha = 0.5 * math.degrees(math.atan2(2.0 * moments.cmu11 + 0.0, moments.cmu20 - moments.cmu02 + 0.0))
    return normalize_angle(alpha)


def mask_orientation(mask: np.ndarray) -> float:
    return orientation_angle(compute_moments(mask))


def angle_difference(a: float, b: float) -> float:
    """Smallest signed difference between two axis angles, in (-90, 90]."""
    return normalize_angle(a - b)


# ---------------------------------------------------------------------------
# Angle-adaptive cropping
# ---------------------------------------------------------------------------

_EPS = 1e-6


@dataclass(frozen=True)
class Derotation:
    """Rotation of a canvas about a centroid onto an expanded canvas.

    ``out = center + R(angle) (src - center) + offset``.
    """

    angle: float
    center: tuple
    offset: tuple
    out_shape: tuple

    @classmethod
    def fit(cls, shape, angle: float, center) -> "Derotation":
        h, w = shape[:2]
        c = np.asarray(center, dtype=np.float64)
        rot = rotation_matrix(angle)
        corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
        q = (corners - c) @ rot.T + c
        lo = np.floor(q.min(axis=0) + _EPS)
        hi = np.ceil(q.max(axis=0) - _EPS)
        off = np.maximum(0.0, -lo)
        size = np.maximum(hi, [w - 1, h - 1]) + off + 1
        return cls(
            angle=float(angle),
            center=(float(c[0]), float(c[1])),
            offset=(int(off[0]), int(off[1])),
            out_shape=(int(size[1]), int(size[0])),
        )

    def apply(self, array: np.ndarray, order: int) -> np.ndarray:
        c = np.asarray(self.center)
        o = np.asarray(self.offset, dtype=np.float64)
        inv = rotation_matrix(-self.angle)
        # src = center + R(-angle) (out - offset - center)
        shift = c - inv @ (c + o)
        return warp(array, inv, shift, self.out_shape, order)


@dataclass(frozen=True)
class OrientedRegion:
    centroid: tuple
    alpha: float
    derotated_bbox: tuple


@dataclass(frozen=True, eq=False)
class CropResult:
    """Output of :func:`angle_adaptive_crop`.

    ``applied_angle`` is the rotation applied to the content (``-alpha``).
    ``bbox`` is ``(x0, y0, x1, y1)``, half-open, in the derotated canvas of
    ``derotation``. ``source_area`` and ``rotated_area`` count mask pixels
    before and after derotation (before cropping).
    """

    crop: np.ndarray
    crop_mask: np.ndarray
    applied_angle: float
    margin: int
    alpha: float
    bbox: tuple
    mask_bbox: tuple
    derotation: Derotation
    source_area: int
    rotated_area: int

    def derotate(self, mask: np.ndarray) -> np.ndarray:
        """Map another mask of the source frame into the derotated canvas."""
        return self.derotation.apply(mask, order=0)

    def window(self, array: np.ndarray) -> np.ndarray:
        x0, y0, x1, y1 = self.bbox
        return array[y0:y1, x0:x1]

    def report(self) -> dict:
        return {
            "alpha_deg": self.alpha,
            "applied_angle_deg": self.applied_angle,
            "bbox": list(self.bbox),
            "margin": self.margin,
        }


def _bbox(mask: np.ndarray):
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1


def oriented_region(mask: np.ndarray) -> OrientedRegion:
    """Centroid, code-horizontal angle and tight box after derotation."""
    m = compute_moments(mask)
    alpha, rotated, _ = _derotate_mask(mask, m)
    return OrientedRegion((m.mu_x, m.mu_y), alpha, _bbox(rotated))


def _derotate_mask(mask: np.ndarray, m: MomentSet):
    alpha = orientation_angle(m)
    center = (m.mu_x, m.mu_y)
    der = Derotation.fit(mask.shape, -alpha, center)
    rotated = der.apply(mask, order=0)
    if rotated.any():
        x0, y0, x1, y1 = _bbox(rotated)
        if (y1 - y0) > (x1 - x0):
            # Codes are wider than tall: take the perpendicular axis.
            alpha = normalize_angle(alpha + 90.0)
            der = Derotation.fit(mask.shape, -alpha, center)
            rotated = der.apply(mask, order=0)
    return alpha, rotated, der


def angle_adaptive_crop(image: np.ndarray, mask: np.ndarray, margin: int = 0) -> CropResult:
    """Derotate image and mask about the mask centroid, then crop the mask box.

    The image is resampled bilinearly and the mask by nearest neighbour on a
    canvas large enough to hold the whole rotated source. The crop is the
    bounding box of the rotated mask grown by ``margin`` and clipped to that
    canvas.
    """
    check_image(image)
    check_mask(mask)
    if mask.shape != image.shape[:2]:
        raise DimensionMismatch(f"mask {mask.shape} vs image {image.shape[:2]}")
    if margin < 0:
        raise ValueError("margin must be >= 0")
    m = compute_moments(mask)
    alpha, rotated, der = _derotate_mask(mask, m)
    if not rotated.any():
        raise EmptyMask("mask vanished during derotation")
    mx0, my0, mx1, my1 = _bbox(rotated)
    h, w = der.out_shape
    x0, y0 = max(0, mx0 - margin), max(0, my0 - margin)
    x1, y1 = min(w, mx1 + margin), min(h, my1 + margin)
    rot_img = der.apply(image, order=1)
    return CropResult(
        crop=np.ascontiguousarray(rot_img[y0:y1, x0:x1]),
        crop_mask=np.ascontiguousarray(rotated[y0:y1, x0:x1]),
        applied_angle=-alpha + 0.0,
        margin=int(margin),
        alpha=alpha,
        bbox=(x0, y0, x1, y1),
        mask_bbox=(mx0, my0, mx1, my1),
        derotation=der,
        source_area=m.m00,
        rotated_area=int(np.count_nonzero(rotated)),
    )
