# cython: language_level=3
"""Compiled hot kernels. Same contracts as ``sgnet._pykernels``."""
import numpy as np
cimport numpy as cnp
from cython cimport floating
from libc.math cimport sqrt, fabs, INFINITY

cnp.import_array()

BACKEND = "cython"


def im2col(floating[:, :, :, ::1] xp, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = xp.shape[0], hp = xp.shape[1], wp = xp.shape[2], c = xp.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((b * oh * ow, kh * kw * c), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t n, y, x, i, j, k, row, col, yy, xx
    with nogil:
        row = 0
        for n in range(b):
            for y in range(oh):
                for x in range(ow):
                    col = 0
                    for i in range(kh):
                        yy = y * stride + i
                        for j in range(kw):
                            xx = x * stride + j
                            for k in range(c):
                                out[row, col] = xp[n, yy, xx, k]
                                col += 1
                    row += 1
    return out_arr


def col2im(floating[:, ::1] cols, padded_shape, Py_ssize_t kh, Py_ssize_t kw, Py_ssize_t stride):
    cdef Py_ssize_t b = padded_shape[0], hp = padded_shape[1], wp = padded_shape[2], c = padded_shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, hp, wp, c), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, y, x, i, j, k, row, col, yy, xx
    with nogil:
        row = 0
        for n in range(b):
            for y in range(oh):
                for x in range(ow):
                    col = 0
                    for i in range(kh):
                        yy = y * stride + i
                        for j in range(kw):
                            xx = x * stride + j
                            for k in range(c):
                                out[n, yy, xx, k] += cols[row, col]
                                col += 1
                    row += 1
    return out_arr


def maxpool_forward(floating[:, :, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t b = x.shape[0], h = x.shape[1], w = x.shape[2], c = x.shape[3]
    cdef Py_ssize_t oh = (h - window) // stride + 1
    cdef Py_ssize_t ow = (w - window) // stride + 1
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.empty((b, oh, ow, c), dtype=dtype)
    arg_arr = np.empty((b, oh, ow, c), dtype=np.int64)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] arg = arg_arr
    cdef Py_ssize_t n, y, xo, k, i, j, yy, xx
    cdef floating best, v
    cdef cnp.int64_t besti
    with nogil:
        for n in range(b):
            for y in range(oh):
                for xo in range(ow):
                    for k in range(c):
                        yy = y * stride
                        xx = xo * stride
                        best = x[n, yy, xx, k]
                        besti = yy * w + xx
                        for i in range(window):
                            for j in range(window):
                                v = x[n, yy + i, xx + j, k]
                                if v > best:
                                    best = v
                                    besti = (yy + i) * w + xx + j
                        out[n, y, xo, k] = best
                        arg[n, y, xo, k] = besti
    return out_arr, arg_arr


def maxpool_backward(floating[:, :, :, ::1] grad_out, cnp.int64_t[:, :, :, ::1] argmax, input_shape):
    cdef Py_ssize_t b = input_shape[0], h = input_shape[1], w = input_shape[2], c = input_shape[3]
    cdef Py_ssize_t oh = grad_out.shape[1], ow = grad_out.shape[2]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((b, h, w, c), dtype=dtype)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t n, y, x, k
    cdef cnp.int64_t idx
    with nogil:
        for n in range(b):
            for y in range(oh):
                for x in range(ow):
                    for k in range(c):
                        idx = argmax[n, y, x, k]
                        out[n, idx // w, idx % w, k] += grad_out[n, y, x, k]
    return out_arr


def patch_extrema(floating[:, :, ::1] padded, Py_ssize_t patch, bint minimize,
                  Py_ssize_t valid_h, Py_ssize_t valid_w):
    cdef Py_ssize_t b = padded.shape[0], hp = padded.shape[1], wp = padded.shape[2]
    cdef Py_ssize_t gr = hp // patch, gc = wp // patch
    ly_arr = np.zeros((b, gr, gc), dtype=np.int64)
    lx_arr = np.zeros((b, gr, gc), dtype=np.int64)
    cdef cnp.int64_t[:, :, ::1] ly = ly_arr
    cdef cnp.int64_t[:, :, ::1] lx = lx_arr
    cdef Py_ssize_t n, r, q, i, j, y, x
    cdef double best, v
    cdef Py_ssize_t bi, bj
    with nogil:
        for n in range(b):
            for r in range(gr):
                for q in range(gc):
                    bi = 0
                    bj = 0
                    best = INFINITY if minimize else -INFINITY
                    for i in range(patch):
                        y = r * patch + i
                        for j in range(patch):
                            x = q * patch + j
                            if minimize:
                                if y >= valid_h or x >= valid_w:
                                    v = INFINITY
                                else:
                                    v = padded[n, y, x]
                                if v < best:
                                    best = v
                                    bi = i
                                    bj = j
                            else:
                                v = padded[n, y, x]
                                if v > best:
                                    best = v
                                    bi = i
                                    bj = j
                    ly[n, r, q] = bi
                    lx[n, r, q] = bj
    return ly_arr, lx_arr


def jacobi_eigh(a_in, double tol, int max_sweeps):
    a_arr = np.array(a_in, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = a_arr.shape[0]
    v_arr = np.eye(n, dtype=np.float64)
    cdef double[:, ::1] a = a_arr
    cdef double[:, ::1] v = v_arr
    cdef Py_ssize_t p, q, k
    cdef int sweep
    cdef double off, apq, theta, t, c, s, x, y
    with nogil:
        for sweep in range(max_sweeps + 1):
            off = 0.0
            for p in range(n):
                for q in range(n):
                    if p != q:
                        off += a[p, q] * a[p, q]
            if sqrt(off) < tol:
                break
            if sweep == max_sweeps:
                sweep = max_sweeps + 1
                break
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = a[p, q]
                    if apq == 0.0:
                        continue
                    theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                    t = 1.0 / (fabs(theta) + sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                    c = 1.0 / sqrt(t * t + 1.0)
                    s = t * c
                    for k in range(n):
                        x = a[k, p]
                        y = a[k, q]
                        a[k, p] = c * x - s * y
                        a[k, q] = s * x + c * y
                    for k in range(n):
                        x = a[p, k]
                        y = a[q, k]
                        a[p, k] = c * x - s * y
                        a[q, k] = s * x + c * y
                    a[p, q] = 0.0
                    a[q, p] = 0.0
                    for k in range(n):
                        x = v[k, p]
                        y = v[k, q]
                        v[k, p] = c * x - s * y
                        v[k, q] = s * x + c * y
    return np.diag(a_arr).copy(), v_arr, sweep
