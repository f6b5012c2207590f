"""Affine resampling shared by cropping and the geometric augmentations.

Coordinates are ``(x, y)`` with x indexing columns and y indexing rows, origin
at the top-left pixel centre. A positive angle turns the +x axis towards +y,
which is clockwise as an image is displayed. Orientation angles from
:mod:`amrf.moments` use the same convention, so rotating content by ``t``
degrees shifts its measured orientation by ``t``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage


def rotation_matrix(angle_deg: float) -> np.ndarray:
    t = math.radians(angle_deg)
    c, s = math.cos(t), math.sin(t)
    return np.array([[c, -s], [s, c]])


def warp(array: np.ndarray, inverse: np.ndarray, shift: np.ndarray, out_shape, order: int) -> np.ndarray:
    """Resample ``array`` so that ``out[p] = array[inverse @ p + shift]``.

    ``inverse`` and ``shift`` are expressed in ``(x, y)``. ``order`` 1 is
    bilinear, 0 nearest neighbour. Samples outside the source are zero.
    uint8 inputs are rounded and clamped; bool inputs stay bool.
    """
    # scipy works in (row, col); swap axes of the xy transform.
    mat = inverse[::-1, ::-1]
    off = np.asarray(shift, dtype=np.float64)[::-1]
    out_shape = tuple(int(v) for v in out_shape)
    if array.dtype == np.bool_:
        res = ndimage.affine_transform(
            array.astype(np.uint8), mat, offset=off, output_shape=out_shape, order=0,
            mode="constant", cval=0, prefilter=False,
        )
        return res.astype(bool)

    src = array.astype(np.float64)
    if src.ndim == 2:
        res = ndimage.affine_transform(
            src, mat, offset=off, output_shape=out_shape, order=order,
            mode="constant", cval=0.0, prefilter=False,
        )
    else:
        res = np.stack(
            [
                ndimage.affine_transform(
                    src[..., ch], mat, offset=off, output_shape=out_shape, order=order,
                    mode="constant", cval=0.0, prefilter=False,
                )
                for ch in range(src.shape[2])
            ],
            axis=-1,
        )
    if array.dtype == np.uint8:
        return np.clip(np.rint(res), 0, 255).astype(np.uint8)
    return res


def rotate_about(array: np.ndarray, angle_deg: float, center, order: int) -> np.ndarray:
    """Rotate content by ``angle_deg`` about ``center`` keeping the canvas size."""
    h, w = array.shape[:2]
    c = np.asarray(center, dtype=np.float64)
    inv = rotation_matrix(-angle_deg)
    return warp(array, inv, c - inv @ c, (h, w), order)


def scale_about(array: np.ndarray, factor: float, center, order: int) -> np.ndarray:
    """Scale content by ``factor`` about ``center`` keeping the canvas size."""
    h, w = array.shape[:2]
    c = np.asarray(center, dtype=np.float64)
    inv = np.eye(2) / factor
    return warp(array, inv, c - inv @ c, (h, w), order)


def image_center(shape) -> tuple:
    h, w = shape[:2]
    return ((w - 1) / 2.0, (h - 1) / 2.0)
