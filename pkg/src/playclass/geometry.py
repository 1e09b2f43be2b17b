"""Raster geometry for segmentation masks.

Perimeter convention: outer crack boundary (pixel-edge polygon) of each
8-connected component, collinear runs merged, then simplified with
Ramer-Douglas-Peucker at a sub-pixel tolerance. The simplification is what
makes the circularity of a digitized disc approach 1 instead of the ~0.9 a
raw staircase polygon would give, while an axis-aligned rectangle stays
exact.

All computations run on bbox-local coordinates so that translating a mask by
whole pixels leaves every derived quantity bitwise unchanged.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from . import kernels

RDP_EPSILON = 1.0


def outer_boundaries(mask: np.ndarray) -> list[np.ndarray]:
    """Outer crack-boundary loops (collinear-merged), largest first.

    The tracer walks hole boundaries too; they come out with negative
    shoelace orientation and are discarded here, so holes never contribute
    to the perimeter.
    """
    loops = []
    for verts in kernels.trace_crack_loops(np.asarray(mask, dtype=bool)):
        if _signed_area_int(verts) > 0:
            loops.append(merge_collinear(verts))
    loops.sort(key=lambda v: -_signed_area_int(v))
    return loops


def _signed_area_int(verts: np.ndarray) -> float:
    x = verts[:, 0]
    y = verts[:, 1]
    s = np.dot(x[:-1], y[1:]) - np.dot(y[:-1], x[1:])
    s += x[-1] * y[0] - y[-1] * x[0]
    return 0.5 * float(s)


def merge_collinear(verts: np.ndarray) -> np.ndarray:
    """Drop polygon vertices where the heading does not change."""
    v = np.asarray(verts)
    n = len(v)
    if n < 3:
        return v
    x, y = v[:, 0], v[:, 1]
    dx = np.empty(n, dtype=v.dtype)
    dy = np.empty(n, dtype=v.dtype)
    dx[:-1] = x[1:] - x[:-1]
    dx[-1] = x[0] - x[-1]
    dy[:-1] = y[1:] - y[:-1]
    dy[-1] = y[0] - y[-1]
    keep = np.empty(n, dtype=bool)
    keep[0] = (dx[-1] != dx[0]) or (dy[-1] != dy[0])
    np.logical_or(dx[:-1] != dx[1:], dy[:-1] != dy[1:], out=keep[1:])
    return v[keep]


def polygon_length(verts: np.ndarray, closed: bool = True) -> float:
    v = np.asarray(verts, dtype=float)
    if len(v) < 2:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    total = float(np.hypot(x[1:] - x[:-1], y[1:] - y[:-1]).sum())
    if closed:
        total += math.hypot(x[0] - x[-1], y[0] - y[-1])
    return total


def polygon_area(verts: np.ndarray) -> float:
    """Signed shoelace area."""
    v = np.asarray(verts, dtype=float)
    if len(v) < 3:
        return 0.0
    return _signed_area_int(v)


def simplify_loop(verts: np.ndarray, eps: float = RDP_EPSILON) -> np.ndarray:
    """RDP on a closed loop, split at the vertex farthest from vertex 0.

    Falls back to the unsimplified loop when the result degenerates below a
    quadrilateral (thin or single-pixel shapes), so perimeter never collapses.
    """
    v = np.asarray(verts, dtype=float)
    if len(v) <= 3:
        return v
    d = np.hypot(v[:, 0] - v[0, 0], v[:, 1] - v[0, 1])
    k = int(np.argmax(d))
    if k == 0:
        return v
    keep_a = kernels.rdp_keep(v[: k + 1], eps)
    keep_b = kernels.rdp_keep(np.vstack([v[k:], v[:1]]), eps)
    out = np.vstack([v[: k + 1][keep_a][:-1], np.vstack([v[k:], v[:1]])[keep_b][:-1]])
    if len(out) < 4:
        return v
    return out


def boundary_perimeter(loops: list[np.ndarray], eps: float = RDP_EPSILON) -> float:
    return sum(polygon_length(simplify_loop(v, eps)) for v in loops)


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Convex hull via Andrew's monotone chain; handles collinear inputs."""
    pts = np.asarray(points, dtype=float)
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    p = pts[order]
    if len(p) > 1:
        keep = np.ones(len(p), bool)
        keep[1:] = np.any(p[1:] != p[:-1], axis=1)
        p = p[keep]
    return kernels.convex_hull_sorted(p)


def hull_area(points: np.ndarray) -> float:
    return abs(polygon_area(convex_hull(points)))


def central_moments(ys: np.ndarray, xs: np.ndarray) -> tuple[float, float, float]:
    """Second-order central moments (mu20, mu02, mu11) of foreground cells.

    Coordinates are shifted to the bbox origin before any arithmetic so the
    result is bitwise translation-invariant; each unit cell contributes its
    own 1/12 variance, which keeps one-row/one-column shapes from collapsing
    to a zero eigenvalue.
    """
    n = ys.size
    xl = (xs - xs.min()).astype(np.int64)
    yl = (ys - ys.min()).astype(np.int64)
    sx, sy = int(xl.sum()), int(yl.sum())
    sxx = int(np.dot(xl, xl))
    syy = int(np.dot(yl, yl))
    sxy = int(np.dot(xl, yl))
    mu20 = (sxx - sx * sx / n) / n + 1.0 / 12.0
    mu02 = (syy - sy * sy / n) / n + 1.0 / 12.0
    mu11 = (sxy - sx * sy / n) / n
    return mu20, mu02, mu11


def ellipse_params(ys: np.ndarray, xs: np.ndarray) -> tuple[float, float, float, float]:
    """(eccentricity, major_axis, minor_axis, orientation) of the moment ellipse.

    Axis lengths follow the equivalent-ellipse convention (4 * sqrt(eigval));
    orientation is the major-axis angle in (-pi/2, pi/2], measured from the
    x axis with y pointing down.
    """
    mu20, mu02, mu11 = central_moments(ys, xs)
    t = mu20 + mu02
    d = math.sqrt((mu20 - mu02) ** 2 + 4.0 * mu11 * mu11)
    l1 = (t + d) / 2.0
    l2 = (t - d) / 2.0
    l2 = max(l2, 0.0)
    ecc = math.sqrt(max(0.0, 1.0 - l2 / l1)) if l1 > 0 else 0.0
    if mu11 == 0.0 and mu20 == mu02:
        theta = 0.0
    else:
        theta = 0.5 * math.atan2(2.0 * mu11, mu20 - mu02)
    return ecc, 4.0 * math.sqrt(l1), 4.0 * math.sqrt(l2), theta


def pole_of_inaccessibility(mask: np.ndarray) -> tuple[int, int]:
    """Interior cell (y, x) maximizing distance to the background.

    Distance is Euclidean, with everything outside the raster counting as
    background. Ties break to the smallest (y, x).
    """
    padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), bool)
    padded[1:-1, 1:-1] = mask
    dist = ndimage.distance_transform_edt(padded)
    flat = int(np.argmax(dist))  # argmax returns the first (row-major) maximum
    y, x = divmod(flat, padded.shape[1])
    return y - 1, x - 1
