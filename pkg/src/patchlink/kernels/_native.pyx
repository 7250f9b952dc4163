# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: bilinear upsampling and affinity-guided refinement.

Mirrors kernels/_fallback.py op for op. Keep the two in sync; the floating
point operation order is part of the contract (tests compare backends).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, floor, sqrt
from libc.stdlib cimport free, malloc

cnp.import_array()


def bilinear_upsample_batch(double[:, :, ::1] vol, Py_ssize_t H, Py_ssize_t W):
    cdef Py_ssize_t M = vol.shape[0]
    cdef Py_ssize_t h_p = vol.shape[1]
    cdef Py_ssize_t w_p = vol.shape[2]

    out_arr = np.empty((M, H, W), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr

    x0_arr = np.empty(W, dtype=np.int64)
    x1_arr = np.empty(W, dtype=np.int64)
    wx_arr = np.empty(W, dtype=np.float64)
    y0_arr = np.empty(H, dtype=np.int64)
    y1_arr = np.empty(H, dtype=np.int64)
    wy_arr = np.empty(H, dtype=np.float64)
    cdef long long[::1] x0 = x0_arr
    cdef long long[::1] x1 = x1_arr
    cdef double[::1] wx = wx_arr
    cdef long long[::1] y0 = y0_arr
    cdef long long[::1] y1 = y1_arr
    cdef double[::1] wy = wy_arr

    cdef double sx = w_p / <double> W
    cdef double sy = h_p / <double> H
    cdef Py_ssize_t i, m, y, x
    cdef double s, a, b, c, d, top, bot

    for i in range(W):
        s = (i + 0.5) * sx - 0.5
        if s < 0.0:
            s = 0.0
        if s > w_p - 1.0:
            s = w_p - 1.0
        x0[i] = <long long> floor(s)
        wx[i] = s - x0[i]
        x1[i] = x0[i] + 1 if x0[i] + 1 < w_p else w_p - 1
    for i in range(H):
        s = (i + 0.5) * sy - 0.5
        if s < 0.0:
            s = 0.0
        if s > h_p - 1.0:
            s = h_p - 1.0
        y0[i] = <long long> floor(s)
        wy[i] = s - y0[i]
        y1[i] = y0[i] + 1 if y0[i] + 1 < h_p else h_p - 1

    for m in range(M):
        for y in range(H):
            for x in range(W):
                a = vol[m, y0[y], x0[x]]
                b = vol[m, y0[y], x1[x]]
                c = vol[m, y1[y], x0[x]]
                d = vol[m, y1[y], x1[x]]
                top = a + wx[x] * (b - a)
                bot = c + wx[x] * (d - c)
                out[m, y, x] = top + wy[y] * (bot - top)
    return out_arr


def affinity_weights(double[:, :, ::1] image, long long[:, ::1] offsets, double sigma_floor):
    cdef Py_ssize_t H = image.shape[0]
    cdef Py_ssize_t W = image.shape[1]
    cdef Py_ssize_t K = offsets.shape[0]

    weights_arr = np.zeros((K, H, W), dtype=np.float64)
    cdef double[:, :, ::1] weights = weights_arr

    cdef double* dbuf = <double*> malloc(K * sizeof(double))
    cdef char* vbuf = <char*> malloc(K)
    if dbuf == NULL or vbuf == NULL:
        free(dbuf)
        free(vbuf)
        raise MemoryError()

    cdef Py_ssize_t y, x, k, ny, nx, cnt
    cdef double dd, total, mu, dev, acc, sigma, dmin, z, e

    try:
        for y in range(H):
            for x in range(W):
                cnt = 0
                total = 0.0
                for k in range(K):
                    ny = y + offsets[k, 0]
                    nx = x + offsets[k, 1]
                    if 0 <= ny < H and 0 <= nx < W:
                        dd = (
                            fabs(image[ny, nx, 0] - image[y, x, 0])
                            + fabs(image[ny, nx, 1] - image[y, x, 1])
                            + fabs(image[ny, nx, 2] - image[y, x, 2])
                        ) / 3.0
                        dbuf[k] = dd
                        vbuf[k] = 1
                        total += dd
                        cnt += 1
                    else:
                        vbuf[k] = 0
                if cnt == 0:
                    continue
                mu = total / cnt
                acc = 0.0
                for k in range(K):
                    if vbuf[k]:
                        dev = dbuf[k] - mu
                        acc += dev * dev
                sigma = sqrt(acc / cnt)
                if sigma < sigma_floor:
                    sigma = sigma_floor
                dmin = 1e300
                for k in range(K):
                    if vbuf[k] and dbuf[k] < dmin:
                        dmin = dbuf[k]
                z = 0.0
                for k in range(K):
                    if vbuf[k]:
                        e = exp((dmin - dbuf[k]) / sigma)
                        weights[k, y, x] = e
                        z += e
                for k in range(K):
                    if vbuf[k]:
                        weights[k, y, x] = weights[k, y, x] / z
    finally:
        free(dbuf)
        free(vbuf)
    return weights_arr


def refine_scores(
    double[:, :, ::1] scores,
    double[:, :, ::1] weights,
    long long[:, ::1] offsets,
    Py_ssize_t iterations,
):
    cdef Py_ssize_t M = scores.shape[0]
    cdef Py_ssize_t H = scores.shape[1]
    cdef Py_ssize_t W = scores.shape[2]
    cdef Py_ssize_t K = offsets.shape[0]

    out_arr = np.asarray(scores).copy()
    cdef double[:, :, ::1] out = out_arr
    buf_arr = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] buf = buf_arr

    cdef Py_ssize_t m, it, y, x, k, ny, nx
    cdef double lo, hi, acc, v

    for m in range(M):
        lo = out[m, 0, 0]
        hi = out[m, 0, 0]
        for y in range(H):
            for x in range(W):
                v = out[m, y, x]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
        for it in range(iterations):
            for y in range(H):
                for x in range(W):
                    acc = 0.0
                    for k in range(K):
                        ny = y + offsets[k, 0]
                        nx = x + offsets[k, 1]
                        if 0 <= ny < H and 0 <= nx < W:
                            acc += weights[k, y, x] * (out[m, ny, nx] - out[m, y, x])
                    v = out[m, y, x] + acc
                    if v < lo:
                        v = lo
                    elif v > hi:
                        v = hi
                    buf[y, x] = v
            for y in range(H):
                for x in range(W):
                    out[m, y, x] = buf[y, x]
    return out_arr
