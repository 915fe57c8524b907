# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled NHWC kernels for the TinyUNet: conv lowering and group norm."""

from libc.math cimport sqrt
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

import numpy as np


cdef double[::1] cython_zeros(Py_ssize_t n):
    return np.zeros(n, dtype=np.float64)

ctypedef fused real:
    float
    double


def im2col(real[:, :, :, ::1] x, real[:, :, :, :, :, ::1] cols, int stride, int pad):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t Ho = cols.shape[1], Wo = cols.shape[2], K = cols.shape[3]
    cdef Py_ssize_t b, oy, ox, i, j, iy, ix0, j_lo, j_hi
    cdef size_t item = sizeof(real)
    with nogil:
        for b in range(B):
            for oy in range(Ho):
                for ox in range(Wo):
                    ix0 = ox * stride - pad
                    # valid j satisfy 0 <= ix0 + j < W; that run is contiguous in x
                    j_lo = -ix0 if ix0 < 0 else 0
                    j_hi = W - ix0 if ix0 + K > W else K
                    for i in range(K):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= H or j_hi <= j_lo:
                            memset(&cols[b, oy, ox, i, 0, 0], 0, K * C * item)
                            continue
                        if j_lo > 0:
                            memset(&cols[b, oy, ox, i, 0, 0], 0, j_lo * C * item)
                        memcpy(&cols[b, oy, ox, i, j_lo, 0], &x[b, iy, ix0 + j_lo, 0],
                               (j_hi - j_lo) * C * item)
                        if j_hi < K:
                            memset(&cols[b, oy, ox, i, j_hi, 0], 0, (K - j_hi) * C * item)


def col2im(real[:, :, :, :, :, ::1] cols, real[:, :, :, ::1] out, int stride, int pad):
    cdef Py_ssize_t B = out.shape[0], H = out.shape[1], W = out.shape[2], C = out.shape[3]
    cdef Py_ssize_t Ho = cols.shape[1], Wo = cols.shape[2], K = cols.shape[3]
    cdef Py_ssize_t b, oy, ox, i, j, c, iy, ix
    cdef real* dst
    cdef real* src
    # accumulate in the same (i, j) order as the numpy fallback so sums match bitwise
    with nogil:
        for b in range(B):
            for i in range(K):
                for j in range(K):
                    for oy in range(Ho):
                        iy = oy * stride + i - pad
                        if iy < 0 or iy >= H:
                            continue
                        for ox in range(Wo):
                            ix = ox * stride + j - pad
                            if ix < 0 or ix >= W:
                                continue
                            dst = &out[b, iy, ix, 0]
                            src = &cols[b, oy, ox, i, j, 0]
                            for c in range(C):
                                dst[c] += src[c]


def group_norm_fwd(real[:, :, :, ::1] x, real[::1] gamma, real[::1] beta, int groups,
                   double eps, real[:, :, :, ::1] y, real[:, :, :, ::1] xhat, real[:, ::1] inv):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[3]
    cdef Py_ssize_t cg = C // groups
    cdef Py_ssize_t b, p, c, g, npix = x.shape[1] * x.shape[2]
    cdef double n = <double>(npix * cg)
    cdef double* acc = <double*>malloc(3 * C * sizeof(double))
    cdef double* cm = acc + C
    cdef double* ci = acc + 2 * C
    cdef real* xb
    cdef real* yb
    cdef real* hb
    cdef double d, s
    with nogil:
        for b in range(B):
            xb = &x[b, 0, 0, 0]
            yb = &y[b, 0, 0, 0]
            hb = &xhat[b, 0, 0, 0]
            # per-channel sums, then folded into group means
            for c in range(C):
                acc[c] = 0.0
            for p in range(npix):
                for c in range(C):
                    acc[c] += xb[p * C + c]
            for g in range(groups):
                s = 0.0
                for c in range(g * cg, (g + 1) * cg):
                    s += acc[c]
                for c in range(g * cg, (g + 1) * cg):
                    cm[c] = s / n
            for c in range(C):
                acc[c] = 0.0
            for p in range(npix):
                for c in range(C):
                    d = xb[p * C + c] - cm[c]
                    acc[c] += d * d
            for g in range(groups):
                s = 0.0
                for c in range(g * cg, (g + 1) * cg):
                    s += acc[c]
                inv[b, g] = <real>(1.0 / sqrt(s / n + eps))
                for c in range(g * cg, (g + 1) * cg):
                    ci[c] = inv[b, g]
            for p in range(npix):
                for c in range(C):
                    d = (xb[p * C + c] - cm[c]) * ci[c]
                    hb[p * C + c] = <real>d
                    yb[p * C + c] = <real>(d * gamma[c] + beta[c])
    free(acc)


def group_norm_bwd(real[:, :, :, ::1] dout, real[:, :, :, ::1] xhat, real[:, ::1] inv,
                   real[::1] gamma, int groups, real[:, :, :, ::1] dx,
                   real[::1] dgamma, real[::1] dbeta):
    cdef Py_ssize_t B = dout.shape[0], C = dout.shape[3]
    cdef Py_ssize_t cg = C // groups
    cdef Py_ssize_t b, p, c, g, npix = dout.shape[1] * dout.shape[2]
    cdef double n = <double>(npix * cg)
    cdef double* buf = <double*>malloc(7 * C * sizeof(double))
    cdef double* dg = buf
    cdef double* dbt = buf + C
    cdef double* s1 = buf + 2 * C
    cdef double* s2 = buf + 3 * C
    cdef double* a1 = buf + 4 * C
    cdef double* a2 = buf + 5 * C
    cdef double* ci = buf + 6 * C
    cdef real* db
    cdef real* hb
    cdef real* ob
    cdef double t1, t2, dv
    with nogil:
        for c in range(C):
            dg[c] = 0.0
            dbt[c] = 0.0
        for b in range(B):
            db = &dout[b, 0, 0, 0]
            hb = &xhat[b, 0, 0, 0]
            ob = &dx[b, 0, 0, 0]
            for c in range(C):
                s1[c] = 0.0
                s2[c] = 0.0
            for p in range(npix):
                for c in range(C):
                    dv = db[p * C + c]
                    s1[c] += dv
                    s2[c] += dv * hb[p * C + c]
            for c in range(C):
                dg[c] += s2[c]
                dbt[c] += s1[c]
            for g in range(groups):
                t1 = 0.0
                t2 = 0.0
                for c in range(g * cg, (g + 1) * cg):
                    t1 += s1[c] * gamma[c]
                    t2 += s2[c] * gamma[c]
                for c in range(g * cg, (g + 1) * cg):
                    a1[c] = t1 / n
                    a2[c] = t2 / n
                    ci[c] = inv[b, g]
            for p in range(npix):
                for c in range(C):
                    ob[p * C + c] = <real>(ci[c] * (db[p * C + c] * gamma[c] - a1[c] - hb[p * C + c] * a2[c]))
        for c in range(C):
            dgamma[c] = <real>dg[c]
            dbeta[c] = <real>dbt[c]
    free(buf)
