"""Pure-Python mask kernels, used when the compiled twin is unavailable.

Same contracts as ``_native``: crack-boundary tracing, monotone-chain convex
hull, and Ramer-Douglas-Peucker point retention. The tracer visits holes too;
callers separate outer loops from hole loops by shoelace orientation.
"""
from __future__ import annotations

import math

import numpy as np

# headings on the corner lattice, y grows downwards
_E, _S, _W, _N = 0, 1, 2, 3


def trace_crack_loops(mask: np.ndarray) -> list[np.ndarray]:
    """Crack-boundary loops of a binary raster, one per boundary.

    Returns (n, 2) int64 arrays of (x, y) corner-lattice vertices, walked with
    foreground on the right. Outer boundaries come out with positive shoelace
    area, hole boundaries negative. Loops are ordered by their starting cell
    in row-major scan order.
    """
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    if h == 0 or w == 0:
        return []

    def cell(x: int, y: int) -> bool:
        return 0 <= x < w and 0 <= y < h and m[y, x]

    north = m & ~np.vstack([np.zeros((1, w), bool), m[:-1]])
    visited = np.zeros_like(north)
    loops = []
    for y0, x0 in np.argwhere(north):
        if visited[y0, x0]:
            continue
        verts = []
        x, y, d = int(x0), int(y0), _E
        start = (x, y, d)
        while True:
            verts.append((x, y))
            if d == _E:
                visited[y, x] = True
                x += 1
            elif d == _S:
                y += 1
            elif d == _W:
                x -= 1
            else:
                y -= 1
            # prefer left turn, then straight, then right: walks the tightest
            # loop that keeps foreground on the right of the heading
            for nd in ((d - 1) % 4, d, (d + 1) % 4):
                if nd == _E:
                    left, right = cell(x, y - 1), cell(x, y)
                elif nd == _S:
                    left, right = cell(x, y), cell(x - 1, y)
                elif nd == _W:
                    left, right = cell(x - 1, y), cell(x - 1, y - 1)
                else:
                    left, right = cell(x - 1, y - 1), cell(x, y - 1)
                if right and not left:
                    d = nd
                    break
            else:
                d = (d + 1) % 4
            if (x, y, d) == start:
                break
        loops.append(np.array(verts, dtype=np.int64))
    return loops


def convex_hull_sorted(pts: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of lexicographically sorted, deduplicated points."""
    n = len(pts)
    if n <= 2:
        return np.asarray(pts, dtype=float)

    def half(iterable):
        chain = []
        for p in iterable:
            while len(chain) >= 2:
                o, a = chain[-2], chain[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    chain.pop()
                else:
                    break
            chain.append(p)
        return chain

    pts = np.asarray(pts, dtype=float)
    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def rdp_keep(pts: np.ndarray, eps: float) -> np.ndarray:
    """Boolean retention mask for RDP simplification of an open chain."""
    pts = np.asarray(pts, dtype=float)
    n = len(pts)
    keep = np.zeros(n, bool)
    keep[0] = keep[-1] = True
    stack = [(0, n - 1)]
    while stack:
        a, b = stack.pop()
        if b <= a + 1:
            continue
        pa, pb = pts[a], pts[b]
        abx, aby = pb[0] - pa[0], pb[1] - pa[1]
        norm = math.hypot(abx, aby)
        seg = pts[a + 1:b]
        if norm == 0.0:
            dist = np.hypot(seg[:, 0] - pa[0], seg[:, 1] - pa[1])
        else:
            dist = np.abs(abx * (seg[:, 1] - pa[1]) - aby * (seg[:, 0] - pa[0])) / norm
        imax = int(np.argmax(dist))
        if dist[imax] > eps:
            m = a + 1 + imax
            keep[m] = True
            stack.append((a, m))
            stack.append((m, b))
    return keep
