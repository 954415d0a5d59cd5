# cython: language_level=3
"""Compiled kernels: im2col/col2im and max pooling as C loops.

The GEMMs go through numpy (and therefore the same BLAS as the fallback), so
results match ``_pykernels`` bit for bit.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()

NAME = "cython"


def im2col(const double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h - kh + 1, wo = w - kw + 1
    out_arr = np.empty((nb * ho * wo, nc * kh * kw), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, c, u, v, row, col
    with nogil:
        row = 0
        for b in range(nb):
            for i in range(ho):
                for j in range(wo):
                    col = 0
                    for c in range(nc):
                        for u in range(kh):
                            for v in range(kw):
                                out[row, col] = x[b, c, i + u, j + v]
                                col = col + 1
                    row = row + 1
    return out_arr


def col2im(cols, shape, Py_ssize_t kh, Py_ssize_t kw):
    cdef Py_ssize_t nb = shape[0], nc = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t ho = h - kh + 1, wo = w - kw + 1
    cdef const double[:, ::1] cv = np.ascontiguousarray(cols, dtype=np.float64).reshape(
        nb * ho * wo, nc * kh * kw)
    out_arr = np.zeros((nb, nc, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, i, j, c, u, v, row, col
    with nogil:
        row = 0
        for b in range(nb):
            for i in range(ho):
                for j in range(wo):
                    col = 0
                    for c in range(nc):
                        for u in range(kh):
                            for v in range(kw):
                                out[b, c, i + u, j + v] += cv[row, col]
                                col = col + 1
                    row = row + 1
    return out_arr


def conv2d_forward(x, kernels, bias):
    cdef Py_ssize_t nb = x.shape[0]
    o, c, kh, kw = kernels.shape
    ho, wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    cols = im2col(x, kh, kw)
    out = cols @ kernels.reshape(o, c * kh * kw).T
    out += bias
    return np.ascontiguousarray(out.reshape(nb, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(x, kernels, grad):
    o, c, kh, kw = kernels.shape
    cols = im2col(x, kh, kw)
    gm = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(-1, o)
    grad_k = (gm.T @ cols).reshape(kernels.shape)
    grad_b = gm.sum(axis=0)
    dcols = gm @ kernels.reshape(o, c * kh * kw)
    grad_x = col2im(dcols, x.shape, kh, kw)
    return grad_x, grad_k, grad_b


def maxpool_forward(const double[:, :, :, ::1] x, Py_ssize_t kh, Py_ssize_t kw,
                    Py_ssize_t sh, Py_ssize_t sw):
    cdef Py_ssize_t nb = x.shape[0], nc = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - kh) // sh + 1, wo = (w - kw) // sw + 1
    out_arr = np.empty((nb, nc, ho, wo), dtype=np.float64)
    idx_arr = np.empty((nb, nc, ho, wo), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t b, c, i, j, u, v, r, q, best_r, best_q
    cdef double best, val
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for i in range(ho):
                    for j in range(wo):
                        best_r = i * sh
                        best_q = j * sw
                        best = x[b, c, best_r, best_q]
                        for u in range(kh):
                            r = i * sh + u
                            for v in range(kw):
                                q = j * sw + v
                                val = x[b, c, r, q]
                                # strict '>' keeps the first maximum in row-major order
                                if val > best:
                                    best = val
                                    best_r = r
                                    best_q = q
                        out[b, c, i, j] = best
                        idx[b, c, i, j] = best_r * w + best_q
    return out_arr, idx_arr


def maxpool_backward(grad, argmax, input_shape):
    cdef Py_ssize_t nb = input_shape[0], nc = input_shape[1]
    cdef Py_ssize_t h = input_shape[2], w = input_shape[3]
    cdef const double[:, :, :, ::1] g = np.ascontiguousarray(grad, dtype=np.float64)
    cdef const cnp.int64_t[:, :, :, ::1] idx = np.ascontiguousarray(argmax, dtype=np.int64)
    cdef Py_ssize_t ho = g.shape[2], wo = g.shape[3]
    out_arr = np.zeros((nb, nc, h * w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, c, i, j
    with nogil:
        for b in range(nb):
            for c in range(nc):
                for i in range(ho):
                    for j in range(wo):
                        out[b, c, idx[b, c, i, j]] += g[b, c, i, j]
    return out_arr.reshape(nb, nc, h, w)
