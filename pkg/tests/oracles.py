"""Independent reference computations used as test oracles.

Nothing here imports the package's numerical code: each function recomputes
its quantity the slow, obvious way.
"""

import math

import numpy as np


def naive_moments(mask):
    """Double loop over pixels: raw moments as ints, central ones as floats."""
    h, w = mask.shape
    m00 = m10 = m01 = m11 = m20 = m02 = 0
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                m00 += 1
                m10 += x
                m01 += y
                m11 += x * y
                m20 += x * x
                m02 += y * y
    if m00 == 0:
        return None
    cx, cy = m10 / m00, m01 / m00
    c11 = c20 = c02 = 0.0
    for y in range(h):
        for x in range(w):
            if mask[y, x]:
                dx, dy = x - cx, y - cy
                c11 += dx * dy
                c20 += dx * dx
                c02 += dy * dy
    return {
        "m00": m00, "m10": m10, "m01": m01, "m11": m11, "m20": m20, "m02": m02,
        "cmu11": c11 / m00, "cmu20": c20 / m00, "cmu02": c02 / m00,
    }


def pca_angle(mask):
    """Principal-axis angle in degrees from the covariance eigenvector, in (-90, 90]."""
    ys, xs = np.nonzero(mask)
    pts = np.stack([xs, ys]).astype(np.float64)
    cov = np.cov(pts, bias=True)
    vals, vecs = np.linalg.eigh(cov)
    vx, vy = vecs[:, int(np.argmax(vals))]
    a = math.degrees(math.atan2(vy, vx))
    while a <= -90.0:
        a += 180.0
    while a > 90.0:
        a -= 180.0
    return a


def axis_diff(a, b):
    d = (a - b) % 180.0
    return d - 180.0 if d > 90.0 else d


def rect_mask(size, length, width, angle_deg, center=None):
    """Rasterise a rotated rectangle by testing pixel centres."""
    c = ((size - 1) / 2.0, (size - 1) / 2.0) if center is None else center
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    t = math.radians(angle_deg)
    dx, dy = xs - c[0], ys - c[1]
    u = dx * math.cos(t) + dy * math.sin(t)
    v = -dx * math.sin(t) + dy * math.cos(t)
    return (np.abs(u) <= length / 2.0) & (np.abs(v) <= width / 2.0)


def gaussian_taps(ksize):
    """Taps from sigma = 0.3 * ((k - 1) / 2 - 1) + 0.8, normalised by their sum."""
    sigma = 0.3 * ((ksize - 1) / 2.0 - 1.0) + 0.8
    half = (ksize - 1) // 2
    w = [math.exp(-(i * i) / (2 * sigma * sigma)) for i in range(-half, half + 1)]
    s = sum(w)
    return [x / s for x in w]


def count_overlap(a, b):
    inter = union = na = nb = 0
    for x, y in zip(a.ravel().tolist(), b.ravel().tolist()):
        inter += x and y
        union += x or y
        na += x
        nb += y
    return inter, union, na, nb
