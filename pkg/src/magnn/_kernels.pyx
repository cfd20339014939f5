# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the hot kernels; same contracts as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


cdef _im2col(const double[:, :, ::1] xpad, Py_ssize_t k, Py_ssize_t L_out,
             Py_ssize_t stride, Py_ssize_t dilation):
    # (B, L_out, C_in * k) patch matrix so the contraction can go through BLAS
    cdef Py_ssize_t B = xpad.shape[0], C_in = xpad.shape[1]
    cols_arr = np.empty((B, L_out, C_in * k))
    cdef double[:, :, ::1] cols = cols_arr
    cdef Py_ssize_t b, c, j, l
    for b in range(B):
        for l in range(L_out):
            for c in range(C_in):
                for j in range(k):
                    cols[b, l, c * k + j] = xpad[b, c, l * stride + j * dilation]
    return cols_arr


def conv1d_forward(const double[:, :, ::1] xpad, const double[:, :, ::1] w,
                   Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t C_out = w.shape[0], k = w.shape[2], Lp = xpad.shape[2]
    cdef Py_ssize_t L_out = (Lp - (k - 1) * dilation - 1) // stride + 1
    w2 = np.asarray(w).reshape(C_out, -1)
    if k == 1:
        # a 1x1 kernel is a plain channel matmul; im2col would only copy
        return np.ascontiguousarray(np.matmul(w2, np.asarray(xpad)[:, :, ::stride][:, :, :L_out]))
    cols = _im2col(xpad, k, L_out, stride, dilation)
    return np.ascontiguousarray(np.matmul(cols, w2.T).transpose(0, 2, 1))


def conv1d_backward(const double[:, :, ::1] g, const double[:, :, ::1] xpad,
                    const double[:, :, ::1] w, Py_ssize_t stride, Py_ssize_t dilation):
    cdef Py_ssize_t B = xpad.shape[0], C_in = xpad.shape[1], Lp = xpad.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], k = w.shape[2], L_out = g.shape[2]
    cols = _im2col(xpad, k, L_out, stride, dilation)
    g_arr = np.asarray(g)
    w2 = np.asarray(w).reshape(C_out, -1)
    gw_arr = np.tensordot(g_arr, cols, axes=([0, 2], [0, 1])).reshape(C_out, C_in, k)
    gcols_arr = np.matmul(g_arr.transpose(0, 2, 1), w2)  # (B, L_out, C_in * k)
    cdef double[:, :, ::1] gcols = np.ascontiguousarray(gcols_arr)
    gx_arr = np.zeros((B, C_in, Lp))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, c, j, l
    for b in range(B):
        for l in range(L_out):
            for c in range(C_in):
                for j in range(k):
                    gx[b, c, l * stride + j * dilation] += gcols[b, l, c * k + j]
    return gx_arr, np.ascontiguousarray(gw_arr)


def maxpool1d_forward(const double[:, :, ::1] x, Py_ssize_t window, Py_ssize_t stride):
    cdef Py_ssize_t B = x.shape[0], C = x.shape[1], L = x.shape[2]
    cdef Py_ssize_t L_out = (L - window) // stride + 1
    out_arr = np.empty((B, C, L_out))
    pos_arr = np.empty((B, C, L_out), dtype=np.int64)
    cdef double[:, :, ::1] out = out_arr
    cdef cnp.int64_t[:, :, ::1] pos = pos_arr
    cdef Py_ssize_t b, c, l, j, best
    cdef double v, bv
    for b in range(B):
        for c in range(C):
            for l in range(L_out):
                best = l * stride
                bv = x[b, c, best]
                for j in range(1, window):
                    v = x[b, c, l * stride + j]
                    if v > bv:
                        bv = v
                        best = l * stride + j
                out[b, c, l] = bv
                pos[b, c, l] = best
    return out_arr, pos_arr


def maxpool1d_backward(const double[:, :, ::1] g, const cnp.int64_t[:, :, ::1] pos,
                       Py_ssize_t length):
    cdef Py_ssize_t B = g.shape[0], C = g.shape[1], L_out = g.shape[2]
    gx_arr = np.zeros((B, C, length))
    cdef double[:, :, ::1] gx = gx_arr
    cdef Py_ssize_t b, c, l
    for b in range(B):
        for c in range(C):
            for l in range(L_out):
                gx[b, c, pos[b, c, l]] += g[b, c, l]
    return gx_arr


def topk_mask(const double[:, ::1] a, Py_ssize_t k):
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    mask_arr = np.zeros((n, m))
    if k >= m:
        mask_arr[:] = 1.0
        return mask_arr
    cdef double[:, ::1] mask = mask_arr
    # per-row buffer of the k best so far, sorted descending
    vals_arr = np.empty(k)
    idx_arr = np.empty(k, dtype=np.int64)
    cdef double[::1] vals = vals_arr
    cdef cnp.int64_t[::1] idx = idx_arr
    cdef Py_ssize_t i, j, filled, p
    cdef double v
    for i in range(n):
        filled = 0
        for j in range(m):
            v = a[i, j]
            # strict comparison: an equal value seen earlier keeps its place
            if filled == k and v <= vals[k - 1]:
                continue
            p = filled if filled < k else k - 1
            while p > 0 and vals[p - 1] < v:
                vals[p] = vals[p - 1]
                idx[p] = idx[p - 1]
                p -= 1
            vals[p] = v
            idx[p] = j
            if filled < k:
                filled += 1
        for p in range(k):
            mask[i, idx[p]] = 1.0
    return mask_arr
