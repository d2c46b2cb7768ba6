# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Pure-numpy equivalents live in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow

cnp.import_array()

# neighbour offsets, order shared with _pykernels.NEIGHBOR_OFFSETS
cdef int[8] _DI = [-1, -1, -1, 0, 0, 1, 1, 1]
cdef int[8] _DJ = [-1, 0, 1, -1, 1, -1, 0, 1]


def convolve_direct(const double[:, ::1] image, const double[:, ::1] kernel):
    """Zero-padded 'same' convolution by explicit summation."""
    cdef Py_ssize_t rows = image.shape[0], cols = image.shape[1]
    cdef Py_ssize_t kr = kernel.shape[0], kc = kernel.shape[1]
    cdef Py_ssize_t hr = kr // 2, hc = kc // 2
    cdef Py_ssize_t i, j, a, b, si, sj
    cdef double acc
    out = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(rows):
        for j in range(cols):
            acc = 0.0
            for a in range(kr):
                si = i + hr - a
                if si < 0 or si >= rows:
                    continue
                for b in range(kc):
                    sj = j + hc - b
                    if sj < 0 or sj >= cols:
                        continue
                    acc += kernel[a, b] * image[si, sj]
            o[i, j] = acc
    return out


cdef inline double _frac(double a, double b, double level) nogil:
    return (level - a) / (b - a)


cdef inline void _store(double[:, :, ::1] pts, long long[:, ::1] ks, Py_ssize_t n,
                        double* px, long long* keys, int e0, int e1) noexcept nogil:
    pts[n, 0, 0] = px[2 * e0]
    pts[n, 0, 1] = px[2 * e0 + 1]
    pts[n, 1, 0] = px[2 * e1]
    pts[n, 1, 1] = px[2 * e1 + 1]
    ks[n, 0] = keys[e0]
    ks[n, 1] = keys[e1]


def marching_squares_segments(const double[:, ::1] img, double level):
    """Return (points[n, 2, 2], edge_keys[n, 2]) for every iso-line segment."""
    cdef Py_ssize_t rows = img.shape[0], cols = img.shape[1]
    cdef Py_ssize_t i, j, n = 0, stride = cols + 1
    cdef int case, npass
    cdef double tl, tr, br, bl
    cdef bint high_center
    cdef double[8] px
    cdef long long[4] keys
    cdef int e0, e1, e2, e3
    points = None
    edge_keys = None
    cdef double[:, :, ::1] pts
    cdef long long[:, ::1] ks
    # first pass counts, second pass fills
    for npass in range(2):
        if npass == 1:
            points = np.empty((n, 2, 2), dtype=np.float64)
            edge_keys = np.empty((n, 2), dtype=np.int64)
            pts = points
            ks = edge_keys
            n = 0
        for i in range(rows - 1):
            for j in range(cols - 1):
                tl = img[i, j]
                tr = img[i, j + 1]
                br = img[i + 1, j + 1]
                bl = img[i + 1, j]
                case = ((tl >= level) * 1 + (tr >= level) * 2
                        + (br >= level) * 4 + (bl >= level) * 8)
                if case == 0 or case == 15:
                    continue
                if npass == 0:
                    n += 2 if (case == 5 or case == 10) else 1
                    continue
                # edge points: 0 top, 1 right, 2 bottom, 3 left
                px[0] = i
                px[1] = j + _frac(tl, tr, level) if (tl >= level) != (tr >= level) else 0.0
                px[2] = i + _frac(tr, br, level) if (tr >= level) != (br >= level) else 0.0
                px[3] = j + 1
                px[4] = i + 1
                px[5] = j + _frac(bl, br, level) if (bl >= level) != (br >= level) else 0.0
                px[6] = i + _frac(tl, bl, level) if (tl >= level) != (bl >= level) else 0.0
                px[7] = j
                keys[0] = 2 * (i * stride + j)
                keys[1] = 2 * (i * stride + j + 1) + 1
                keys[2] = 2 * ((i + 1) * stride + j)
                keys[3] = 2 * (i * stride + j) + 1
                if case == 5 or case == 10:
                    high_center = 0.25 * (tl + tr + br + bl) >= level
                    if (case == 5) == high_center:
                        e0, e1, e2, e3 = 0, 1, 2, 3
                    else:
                        e0, e1, e2, e3 = 0, 3, 1, 2
                    _store(pts, ks, n, px, keys, e0, e1)
                    _store(pts, ks, n + 1, px, keys, e2, e3)
                    n += 2
                    continue
                e0 = -1
                e1 = -1
                if (tl >= level) != (tr >= level):
                    e0 = 0
                if (tr >= level) != (br >= level):
                    if e0 < 0:
                        e0 = 1
                    else:
                        e1 = 1
                if (bl >= level) != (br >= level):
                    if e0 < 0:
                        e0 = 2
                    else:
                        e1 = 2
                if (tl >= level) != (bl >= level):
                    e1 = 3
                _store(pts, ks, n, px, keys, e0, e1)
                n += 1
    return points, edge_keys


def neighbor_prior(const double[:, ::1] t, const double[:, :, ::1] weights,
                   double eps, double power):
    """Value and gradient of sum_d sum_p w[d, p] * (|t[p] - t[p + d]|^2 + eps^2)^(power / 2)."""
    cdef Py_ssize_t rows = t.shape[0], cols = t.shape[1]
    cdef Py_ssize_t i, j, m, n
    cdef int d
    cdef double w, diff, base, pb, eps2 = eps * eps, half = 0.5 * power
    cdef double value = 0.0, g
    grad = np.zeros((rows, cols), dtype=np.float64)
    cdef double[:, ::1] gr = grad
    # offsets d and 7 - d are opposite, so each unordered pair is visited once
    # from its forward offset with the two ordered weights combined
    for i in range(rows):
        for j in range(cols):
            for d in range(4, 8):
                m = i + _DI[d]
                n = j + _DJ[d]
                if m >= rows or n < 0 or n >= cols:
                    continue
                w = weights[d, i, j] + weights[7 - d, m, n]
                if w == 0.0:
                    continue
                diff = t[i, j] - t[m, n]
                base = diff * diff + eps2
                pb = pow(base, half)
                value += w * pb
                g = w * power * diff * pb / base
                gr[i, j] += g
                gr[m, n] -= g
    return value, grad
