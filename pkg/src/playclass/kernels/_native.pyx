# Compiled twins of kernels.pure: crack tracing, convex hull, RDP retention.
from libc.math cimport fabs, hypot

import numpy as np

cimport numpy as cnp

cnp.import_array()

cdef inline bint _cell(const unsigned char[:, ::1] m, Py_ssize_t h, Py_ssize_t w,
                       Py_ssize_t x, Py_ssize_t y) nogil:
    if x < 0 or x >= w or y < 0 or y >= h:
        return 0
    return m[y, x] != 0


def trace_crack_loops(mask):
    """Crack-boundary loops of a binary raster; same contract as the pure twin
    (outer loops positively oriented, holes negative)."""
    cdef cnp.ndarray m_arr = np.ascontiguousarray(mask, dtype=np.uint8)
    cdef const unsigned char[:, ::1] m = m_arr
    cdef Py_ssize_t h = m.shape[0], w = m.shape[1]
    loops = []
    if h == 0 or w == 0:
        return loops

    cdef cnp.ndarray visited_arr = np.zeros((h, w), dtype=np.uint8)
    cdef unsigned char[:, ::1] visited = visited_arr

    cdef Py_ssize_t sy, sx, x, y, cap, n
    cdef int d, sd, nd, k
    cdef bint left, right, found
    cdef cnp.ndarray verts_arr
    cdef long long[:, ::1] verts

    # a loop visits each crack edge at most once
    cap = 2 * h * w + h + w + 2
    for sy in range(h):
        for sx in range(w):
            if not m[sy, sx] or visited[sy, sx]:
                continue
            if sy > 0 and m[sy - 1, sx]:
                continue
            verts_arr = np.empty((cap, 2), dtype=np.int64)
            verts = verts_arr
            n = 0
            x = sx
            y = sy
            d = 0  # 0=E 1=S 2=W 3=N
            sd = d
            while True:
                verts[n, 0] = x
                verts[n, 1] = y
                n += 1
                if d == 0:
                    visited[y, x] = 1
                    x += 1
                elif d == 1:
                    y += 1
                elif d == 2:
                    x -= 1
                else:
                    y -= 1
                # left turn, then straight, then right turn
                found = 0
                for k in range(3):
                    nd = (d + 3 + k) % 4
                    if nd == 0:
                        left = _cell(m, h, w, x, y - 1)
                        right = _cell(m, h, w, x, y)
                    elif nd == 1:
                        left = _cell(m, h, w, x, y)
                        right = _cell(m, h, w, x - 1, y)
                    elif nd == 2:
                        left = _cell(m, h, w, x - 1, y)
                        right = _cell(m, h, w, x - 1, y - 1)
                    else:
                        left = _cell(m, h, w, x - 1, y - 1)
                        right = _cell(m, h, w, x, y - 1)
                    if right and not left:
                        d = nd
                        found = 1
                        break
                if not found:
                    d = (d + 1) % 4
                if x == sx and y == sy and d == sd:
                    break
            loops.append(verts_arr[:n].copy())
    return loops


def convex_hull_sorted(pts):
    """Monotone-chain hull of lexicographically sorted, deduplicated points."""
    cdef cnp.ndarray p_arr = np.ascontiguousarray(pts, dtype=np.float64)
    cdef const double[:, ::1] p = p_arr
    cdef Py_ssize_t n = p.shape[0]
    if n <= 2:
        return p_arr.copy()
    cdef cnp.ndarray idx_arr = np.empty(2 * n + 1, dtype=np.int64)
    cdef long long[::1] chain = idx_arr
    cdef Py_ssize_t k = 0, i, lower_len
    cdef double cross
    for i in range(n):
        while k >= 2:
            cross = ((p[chain[k - 1], 0] - p[chain[k - 2], 0])
                     * (p[i, 1] - p[chain[k - 2], 1])
                     - (p[chain[k - 1], 1] - p[chain[k - 2], 1])
                     * (p[i, 0] - p[chain[k - 2], 0]))
            if cross <= 0:
                k -= 1
            else:
                break
        chain[k] = i
        k += 1
    lower_len = k
    for i in range(n - 2, -1, -1):
        while k >= lower_len + 1:
            cross = ((p[chain[k - 1], 0] - p[chain[k - 2], 0])
                     * (p[i, 1] - p[chain[k - 2], 1])
                     - (p[chain[k - 1], 1] - p[chain[k - 2], 1])
                     * (p[i, 0] - p[chain[k - 2], 0]))
            if cross <= 0:
                k -= 1
            else:
                break
        chain[k] = i
        k += 1
    # both chains include their endpoints; drop the duplicated last vertex
    return p_arr[idx_arr[:k - 1]]


def rdp_keep(pts, double eps):
    """Boolean retention mask for RDP simplification of an open chain."""
    cdef cnp.ndarray p_arr = np.ascontiguousarray(pts, dtype=np.float64)
    cdef const double[:, ::1] p = p_arr
    cdef Py_ssize_t n = p.shape[0]
    cdef cnp.ndarray keep_arr = np.zeros(n, dtype=np.uint8)
    cdef unsigned char[::1] keep = keep_arr
    if n == 0:
        return keep_arr.astype(bool)
    keep[0] = 1
    keep[n - 1] = 1
    cdef cnp.ndarray stack_arr = np.empty((2 * n + 2, 2), dtype=np.int64)
    cdef long long[:, ::1] stack = stack_arr
    cdef Py_ssize_t top = 0, a, b, i, imax, mid
    cdef double ax, ay, bx, by, norm, dist, best
    stack[0, 0] = 0
    stack[0, 1] = n - 1
    top = 1
    while top > 0:
        top -= 1
        a = stack[top, 0]
        b = stack[top, 1]
        if b <= a + 1:
            continue
        ax = p[a, 0]
        ay = p[a, 1]
        bx = p[b, 0] - ax
        by = p[b, 1] - ay
        norm = hypot(bx, by)
        best = -1.0
        imax = a + 1
        for i in range(a + 1, b):
            if norm == 0.0:
                dist = hypot(p[i, 0] - ax, p[i, 1] - ay)
            else:
                dist = fabs(bx * (p[i, 1] - ay) - by * (p[i, 0] - ax)) / norm
            if dist > best:
                best = dist
                imax = i
        if best > eps:
            keep[imax] = 1
            stack[top, 0] = a
            stack[top, 1] = imax
            stack[top + 1, 0] = imax
            stack[top + 1, 1] = b
            top += 2
    return keep_arr.astype(bool)
