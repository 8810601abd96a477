# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels: bilinear sampling, fixed-point field inversion, Levenshtein."""

import numpy as np

from libc.math cimport floor, fabs


cdef inline void _sample_point(const double[:, :, ::1] src, double gx, double gy,
                               bint border, double* out) noexcept nogil:
    cdef Py_ssize_t H = src.shape[0], W = src.shape[1], C = src.shape[2]
    cdef double x = (gx + 1.0) * 0.5 * (W - 1)
    cdef double y = (gy + 1.0) * 0.5 * (H - 1)
    cdef Py_ssize_t x0, y0, xi, yi, c, k
    cdef double fx, fy, wgt
    if border:
        if x < 0.0:
            x = 0.0
        elif x > W - 1:
            x = W - 1
        if y < 0.0:
            y = 0.0
        elif y > H - 1:
            y = H - 1
    for c in range(C):
        out[c] = 0.0
    x0 = <Py_ssize_t>floor(x)
    y0 = <Py_ssize_t>floor(y)
    fx = x - x0
    fy = y - y0
    for k in range(4):
        xi = x0 + (k & 1)
        yi = y0 + (k >> 1)
        if xi < 0 or xi >= W or yi < 0 or yi >= H:
            continue
        wgt = (fx if (k & 1) else 1.0 - fx) * (fy if (k >> 1) else 1.0 - fy)
        for c in range(C):
            out[c] += wgt * src[yi, xi, c]


def bilinear_sample(const double[:, :, ::1] src, const double[:, :, ::1] grid, bint border=False):
    cdef Py_ssize_t h = grid.shape[0], w = grid.shape[1], C = src.shape[2]
    cdef Py_ssize_t i, j
    out = np.zeros((h, w, C), dtype=np.float64)
    cdef double[:, :, ::1] o = out
    with nogil:
        for i in range(h):
            for j in range(w):
                _sample_point(src, grid[i, j, 0], grid[i, j, 1], border, &o[i, j, 0])
    return out


def invert_field(const double[:, :, ::1] fwd, double tol_px, int max_iter):
    """Solve fwd(p) = q for p on fwd's own grid by fixed-point sweeps.

    Returns (inverse map, sweeps, last max update in px).
    """
    cdef Py_ssize_t h = fwd.shape[0], w = fwd.shape[1]
    cdef Py_ssize_t i, j
    cdef int it = 0
    cdef double sx = 0.5 * (w - 1), sy = 0.5 * (h - 1)
    cdef double qx, qy, dx, dy, upd, worst = np.inf
    cdef double val[2]
    inv = np.empty((h, w, 2), dtype=np.float64)
    cdef double[:, :, ::1] p = inv
    for i in range(h):
        for j in range(w):
            p[i, j, 0] = 2.0 * j / (w - 1) - 1.0
            p[i, j, 1] = 2.0 * i / (h - 1) - 1.0
    with nogil:
        while it < max_iter:
            it += 1
            worst = 0.0
            for i in range(h):
                qy = 2.0 * i / (h - 1) - 1.0
                for j in range(w):
                    qx = 2.0 * j / (w - 1) - 1.0
                    _sample_point(fwd, p[i, j, 0], p[i, j, 1], True, val)
                    dx = val[0] - qx
                    dy = val[1] - qy
                    p[i, j, 0] -= dx
                    p[i, j, 1] -= dy
                    upd = fabs(dx) * sx
                    if fabs(dy) * sy > upd:
                        upd = fabs(dy) * sy
                    if upd > worst:
                        worst = upd
            if worst < tol_px:
                break
    return inv, it, worst


def levenshtein(a, b):
    cdef int[::1] s = np.frombuffer(a.encode("utf-32-le"), dtype=np.int32).copy()
    cdef int[::1] t = np.frombuffer(b.encode("utf-32-le"), dtype=np.int32).copy()
    cdef Py_ssize_t n = s.shape[0], m = t.shape[0], i, j
    cdef Py_ssize_t[:, ::1] rows = np.empty((2, m + 1), dtype=np.intp)
    cdef Py_ssize_t best, cand, a_row, b_row
    for j in range(m + 1):
        rows[0, j] = j
    with nogil:
        for i in range(1, n + 1):
            a_row = (i - 1) & 1
            b_row = i & 1
            rows[b_row, 0] = i
            for j in range(1, m + 1):
                best = rows[a_row, j - 1] + (0 if s[i - 1] == t[j - 1] else 1)
                cand = rows[a_row, j] + 1
                if cand < best:
                    best = cand
                cand = rows[b_row, j - 1] + 1
                if cand < best:
                    best = cand
                rows[b_row, j] = best
    return int(rows[n & 1, m])
