# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the hot kernels.

Same contracts as `numpy_backend`; loops are fused and allocation-light so
microbenchmark timings at small sizes track arithmetic cost rather than
interpreter overhead. Scans are strictly sequential per column, matching
the reference kernels bitwise.
"""

import numpy as np

from libc.math cimport exp

NAME = "fast"


def column_logits(double[:, :, :, ::1] fk, double[:, ::1] q):
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], w = fk.shape[2], c = fk.shape[3]
    out_arr = np.empty((b, h, w))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double acc
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for k in range(c):
                        acc += fk[bi, i, j, k] * q[j, k]
                    out[bi, i, j] = acc
    return out_arr


def column_logits_backward(double[:, :, ::1] g, double[:, :, :, ::1] fk,
                           double[:, ::1] q):
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], w = fk.shape[2], c = fk.shape[3]
    dfk_arr = np.empty((b, h, w, c))
    dq_arr = np.zeros((w, c))
    cdef double[:, :, :, ::1] dfk = dfk_arr
    cdef double[:, ::1] dq = dq_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double gv
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(w):
                    gv = g[bi, i, j]
                    for k in range(c):
                        dfk[bi, i, j, k] = gv * q[j, k]
                        dq[j, k] += gv * fk[bi, i, j, k]
    return dfk_arr, dq_arr


def softmax_columns(double[:, :, ::1] logits):
    cdef Py_ssize_t b = logits.shape[0], h = logits.shape[1], w = logits.shape[2]
    out_arr = np.empty((b, h, w))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j
    cdef double m, total
    with nogil:
        for bi in range(b):
            for j in range(w):
                m = logits[bi, 0, j]
                for i in range(1, h):
                    if logits[bi, i, j] > m:
                        m = logits[bi, i, j]
                total = 0.0
                for i in range(h):
                    out[bi, i, j] = exp(logits[bi, i, j] - m)
                    total += out[bi, i, j]
                for i in range(h):
                    out[bi, i, j] /= total
    return out_arr


def softmax_columns_backward(double[:, :, ::1] g, double[:, :, ::1] w):
    cdef Py_ssize_t b = g.shape[0], h = g.shape[1], wd = g.shape[2]
    out_arr = np.empty((b, h, wd))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j
    cdef double s
    with nogil:
        for bi in range(b):
            for j in range(wd):
                s = 0.0
                for i in range(h):
                    s += g[bi, i, j] * w[bi, i, j]
                for i in range(h):
                    out[bi, i, j] = w[bi, i, j] * (g[bi, i, j] - s)
    return out_arr


def plane_logits(double[:, :, :, ::1] fk, double[::1] q):
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], w = fk.shape[2], c = fk.shape[3]
    out_arr = np.empty((b, h, w))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double acc
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(w):
                    acc = 0.0
                    for k in range(c):
                        acc += fk[bi, i, j, k] * q[k]
                    out[bi, i, j] = acc
    return out_arr


def plane_logits_backward(double[:, :, ::1] g, double[:, :, :, ::1] fk,
                          double[::1] q):
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], w = fk.shape[2], c = fk.shape[3]
    dfk_arr = np.empty((b, h, w, c))
    dq_arr = np.zeros(c)
    cdef double[:, :, :, ::1] dfk = dfk_arr
    cdef double[::1] dq = dq_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double gv
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(w):
                    gv = g[bi, i, j]
                    for k in range(c):
                        dfk[bi, i, j, k] = gv * q[k]
                        dq[k] += gv * fk[bi, i, j, k]
    return dfk_arr, dq_arr


def softmax_plane(double[:, :, ::1] logits):
    cdef Py_ssize_t b = logits.shape[0], h = logits.shape[1], w = logits.shape[2]
    out_arr = np.empty((b, h, w))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j
    cdef double m, total
    with nogil:
        for bi in range(b):
            m = logits[bi, 0, 0]
            for i in range(h):
                for j in range(w):
                    if logits[bi, i, j] > m:
                        m = logits[bi, i, j]
            total = 0.0
            for i in range(h):
                for j in range(w):
                    out[bi, i, j] = exp(logits[bi, i, j] - m)
                    total += out[bi, i, j]
            for i in range(h):
                for j in range(w):
                    out[bi, i, j] /= total
    return out_arr


def softmax_plane_backward(double[:, :, ::1] g, double[:, :, ::1] w):
    cdef Py_ssize_t b = g.shape[0], h = g.shape[1], wd = g.shape[2]
    out_arr = np.empty((b, h, wd))
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j
    cdef double s
    with nogil:
        for bi in range(b):
            s = 0.0
            for i in range(h):
                for j in range(wd):
                    s += g[bi, i, j] * w[bi, i, j]
            for i in range(h):
                for j in range(wd):
                    out[bi, i, j] = w[bi, i, j] * (g[bi, i, j] - s)
    return out_arr


def scale_by_plane(double[:, :, :, ::1] f, double[:, :, ::1] w):
    cdef Py_ssize_t b = f.shape[0], h = f.shape[1], wd = f.shape[2], c = f.shape[3]
    out_arr = np.empty((b, h, wd, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double wv
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(wd):
                    wv = w[bi, i, j]
                    for k in range(c):
                        out[bi, i, j, k] = f[bi, i, j, k] * wv
    return out_arr


def scale_by_plane_backward(double[:, :, :, ::1] g, double[:, :, :, ::1] f,
                            double[:, :, ::1] w):
    cdef Py_ssize_t b = f.shape[0], h = f.shape[1], wd = f.shape[2], c = f.shape[3]
    df_arr = np.empty((b, h, wd, c))
    dw_arr = np.empty((b, h, wd))
    cdef double[:, :, :, ::1] df = df_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double wv, acc
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(wd):
                    wv = w[bi, i, j]
                    acc = 0.0
                    for k in range(c):
                        df[bi, i, j, k] = g[bi, i, j, k] * wv
                        acc += g[bi, i, j, k] * f[bi, i, j, k]
                    dw[bi, i, j] = acc
    return df_arr, dw_arr


def cumsum_rows(double[:, :, :, ::1] f):
    cdef Py_ssize_t b = f.shape[0], h = f.shape[1], w = f.shape[2], c = f.shape[3]
    out_arr = np.empty((b, h, w, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    with nogil:
        for bi in range(b):
            for j in range(w):
                for k in range(c):
                    out[bi, 0, j, k] = f[bi, 0, j, k]
            for i in range(1, h):
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = out[bi, i - 1, j, k] + f[bi, i, j, k]
    return out_arr


def cumsum_rows_backward(double[:, :, :, ::1] g):
    cdef Py_ssize_t b = g.shape[0], h = g.shape[1], w = g.shape[2], c = g.shape[3]
    out_arr = np.empty((b, h, w, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    with nogil:
        for bi in range(b):
            for j in range(w):
                for k in range(c):
                    out[bi, h - 1, j, k] = g[bi, h - 1, j, k]
            for i in range(h - 2, -1, -1):
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = out[bi, i + 1, j, k] + g[bi, i, j, k]
    return out_arr


def scale_rows(double[:, :, :, ::1] f, double[::1] s):
    cdef Py_ssize_t b = f.shape[0], h = f.shape[1], w = f.shape[2], c = f.shape[3]
    out_arr = np.empty((b, h, w, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double sv
    with nogil:
        for bi in range(b):
            for i in range(h):
                sv = s[i]
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = f[bi, i, j, k] * sv
    return out_arr


def divide_rows(double[:, :, :, ::1] f, double[::1] d):
    cdef Py_ssize_t b = f.shape[0], h = f.shape[1], w = f.shape[2], c = f.shape[3]
    out_arr = np.empty((b, h, w, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double dv
    with nogil:
        for bi in range(b):
            for i in range(h):
                dv = d[i]
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = f[bi, i, j, k] / dv
    return out_arr


def attention_reweight(double[:, :, :, ::1] fb, double[:, :, :, ::1] fk,
                       double[:, ::1] q):
    """Fused training-path forward; returns (re-weighted features, weights)."""
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], w = fk.shape[2], c = fk.shape[3]
    out_arr = np.empty((b, h, w, c))
    w_arr = np.empty((b, h, w))
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[:, :, ::1] wts = w_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double acc, m, total, wv
    with nogil:
        for bi in range(b):
            for j in range(w):
                m = -1e300
                for i in range(h):
                    acc = 0.0
                    for k in range(c):
                        acc += fk[bi, i, j, k] * q[j, k]
                    wts[bi, i, j] = acc
                    if acc > m:
                        m = acc
                total = 0.0
                for i in range(h):
                    wts[bi, i, j] = exp(wts[bi, i, j] - m)
                    total += wts[bi, i, j]
                for i in range(h):
                    wv = wts[bi, i, j] / total
                    wts[bi, i, j] = wv
                    for k in range(c):
                        out[bi, i, j, k] = fb[bi, i, j, k] * wv
    return out_arr, w_arr


def attention_reweight_backward(double[:, :, :, ::1] g,
                                double[:, :, :, ::1] fb,
                                double[:, :, :, ::1] fk,
                                double[:, ::1] q,
                                double[:, :, ::1] w):
    """Adjoint of `attention_reweight` w.r.t. (fb, fk, q).

    Three storage-order passes over the big blocks (column-major work only
    touches the small (B, H, W) plane) so the walk stays prefetch-friendly.
    """
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], wd = fk.shape[2], c = fk.shape[3]
    dfb_arr = np.empty((b, h, wd, c))
    dfk_arr = np.empty((b, h, wd, c))
    dq_arr = np.zeros((wd, c))
    dw_arr = np.empty((b, h, wd))
    s_arr = np.empty((b, wd))
    cdef double[:, :, :, ::1] dfb = dfb_arr
    cdef double[:, :, :, ::1] dfk = dfk_arr
    cdef double[:, ::1] dq = dq_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef double[:, ::1] s = s_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double acc, ds, wv
    with nogil:
        for bi in range(b):
            for i in range(h):
                for j in range(wd):
                    wv = w[bi, i, j]
                    acc = 0.0
                    for k in range(c):
                        dfb[bi, i, j, k] = g[bi, i, j, k] * wv
                        acc += g[bi, i, j, k] * fb[bi, i, j, k]
                    dw[bi, i, j] = acc
        for bi in range(b):
            for j in range(wd):
                s[bi, j] = 0.0
            for i in range(h):
                for j in range(wd):
                    s[bi, j] += dw[bi, i, j] * w[bi, i, j]
        for bi in range(b):
            for i in range(h):
                for j in range(wd):
                    ds = w[bi, i, j] * (dw[bi, i, j] - s[bi, j])
                    for k in range(c):
                        dfk[bi, i, j, k] = ds * q[j, k]
                        dq[j, k] += ds * fk[bi, i, j, k]
    return dfb_arr, dfk_arr, dq_arr


def scan_mean(double[:, :, :, ::1] f):
    """Running mean over rows: prefix sum / 1-based position, fused."""
    cdef Py_ssize_t b = f.shape[0], h = f.shape[1], w = f.shape[2], c = f.shape[3]
    out_arr = np.empty((b, h, w, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    with nogil:
        for bi in range(b):
            for j in range(w):
                for k in range(c):
                    out[bi, 0, j, k] = f[bi, 0, j, k]
            for i in range(1, h):
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = out[bi, i - 1, j, k] + f[bi, i, j, k]
            for i in range(h):
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = out[bi, i, j, k] / (<double> (i + 1))
    return out_arr


def scan_mean_backward(double[:, :, :, ::1] g):
    cdef Py_ssize_t b = g.shape[0], h = g.shape[1], w = g.shape[2], c = g.shape[3]
    out_arr = np.empty((b, h, w, c))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t bi, i, j, k
    with nogil:
        for bi in range(b):
            for j in range(w):
                for k in range(c):
                    out[bi, h - 1, j, k] = g[bi, h - 1, j, k] / (<double> h)
            for i in range(h - 2, -1, -1):
                for j in range(w):
                    for k in range(c):
                        out[bi, i, j, k] = out[bi, i + 1, j, k] \
                            + g[bi, i, j, k] / (<double> (i + 1))
    return out_arr


def fused_column_attention(double[:, :, :, ::1] fb, double[:, :, :, ::1] fk,
                           double[:, ::1] q):
    """Logits + per-column softmax + re-weighting in one pass per column."""
    cdef Py_ssize_t b = fk.shape[0], h = fk.shape[1], w = fk.shape[2], c = fk.shape[3]
    out_arr = np.empty((b, h, w, c))
    col_arr = np.empty(h)
    cdef double[:, :, :, ::1] out = out_arr
    cdef double[::1] col = col_arr
    cdef Py_ssize_t bi, i, j, k
    cdef double acc, m, total, wv
    with nogil:
        for bi in range(b):
            for j in range(w):
                m = -1e300
                for i in range(h):
                    acc = 0.0
                    for k in range(c):
                        acc += fk[bi, i, j, k] * q[j, k]
                    col[i] = acc
                    if acc > m:
                        m = acc
                total = 0.0
                for i in range(h):
                    col[i] = exp(col[i] - m)
                    total += col[i]
                for i in range(h):
                    wv = col[i] / total
                    for k in range(c):
                        out[bi, i, j, k] = fb[bi, i, j, k] * wv
    return out_arr
