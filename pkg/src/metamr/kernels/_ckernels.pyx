# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""C implementations of the dense kernels (same API as _pykernels).

Matrix products, tanh, and attn_context stay on numpy: BLAS and SIMD beat
a plain C loop there by a wide margin. The C loops carry the ops numpy
handles badly at these sizes (fused accumulations, scatters, row-wise
reductions); see benchmarks/bench_backends.py for the split.
"""
from libc.math cimport exp, log

import numpy as np

BACKEND = "cython"


def matmul(a, b):
    return np.asarray(a) @ np.asarray(b)


def matmul_nt(a, b):
    return np.asarray(a) @ np.asarray(b).T


def matmul_tn(a, b):
    return np.asarray(a).T @ np.asarray(b)


def ewadd(a, b):
    a2 = np.ascontiguousarray(a).reshape(-1)
    b2 = np.ascontiguousarray(b).reshape(-1)
    out_arr = np.empty_like(a2)
    cdef double[::1] x = a2, y = b2, out = out_arr
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = x[i] + y[i]
    return out_arr.reshape(np.asarray(a).shape)


def ewmul(a, b):
    a2 = np.ascontiguousarray(a).reshape(-1)
    b2 = np.ascontiguousarray(b).reshape(-1)
    out_arr = np.empty_like(a2)
    cdef double[::1] x = a2, y = b2, out = out_arr
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = x[i] * y[i]
    return out_arr.reshape(np.asarray(a).shape)


def affine(a, double mul, double add):
    a2 = np.ascontiguousarray(a).reshape(-1)
    out_arr = np.empty_like(a2)
    cdef double[::1] x = a2, out = out_arr
    cdef Py_ssize_t i
    for i in range(x.shape[0]):
        out[i] = x[i] * mul + add
    return out_arr.reshape(np.asarray(a).shape)


def add_rowbias(double[:, ::1] m, double[::1] b):
    cdef Py_ssize_t n = m.shape[0], d = m.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            out[i, j] = m[i, j] + b[j]
    return out_arr


def colsum(double[:, ::1] m):
    cdef Py_ssize_t n = m.shape[0], d = m.shape[1]
    out_arr = np.zeros(d)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        for j in range(d):
            out[j] += m[i, j]
    return out_arr


def tanh(a):
    return np.tanh(a)


def tanh_vjp(y, g):
    y2 = np.ascontiguousarray(y).reshape(-1)
    g2 = np.ascontiguousarray(g).reshape(-1)
    out_arr = np.empty_like(y2)
    cdef double[::1] yv = y2, gv = g2, out = out_arr
    cdef Py_ssize_t i
    for i in range(yv.shape[0]):
        out[i] = gv[i] * (1.0 - yv[i] * yv[i])
    return out_arr.reshape(np.asarray(y).shape)


def sigmoid(a):
    a2 = np.ascontiguousarray(a).reshape(-1)
    out_arr = np.empty_like(a2)
    cdef double[::1] x = a2, out = out_arr
    cdef Py_ssize_t i
    cdef double e
    for i in range(x.shape[0]):
        if x[i] >= 0:
            out[i] = 1.0 / (1.0 + exp(-x[i]))
        else:
            e = exp(x[i])
            out[i] = e / (1.0 + e)
    return out_arr.reshape(np.asarray(a).shape)


def sigmoid_vjp(y, g):
    y2 = np.ascontiguousarray(y).reshape(-1)
    g2 = np.ascontiguousarray(g).reshape(-1)
    out_arr = np.empty_like(y2)
    cdef double[::1] yv = y2, gv = g2, out = out_arr
    cdef Py_ssize_t i
    for i in range(yv.shape[0]):
        out[i] = gv[i] * yv[i] * (1.0 - yv[i])
    return out_arr.reshape(np.asarray(y).shape)


def softmax_rows(double[:, ::1] x):
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double mx, z
    for i in range(n):
        mx = x[i, 0]
        for j in range(1, d):
            if x[i, j] > mx:
                mx = x[i, j]
        z = 0.0
        for j in range(d):
            out[i, j] = exp(x[i, j] - mx)
            z += out[i, j]
        for j in range(d):
            out[i, j] /= z
    return out_arr


def softmax_rows_vjp(double[:, ::1] y, double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], d = y.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    cdef double dot
    for i in range(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * y[i, j]
        for j in range(d):
            out[i, j] = y[i, j] * (g[i, j] - dot)
    return out_arr


def embedding_fwd(double[:, ::1] table, long[::1] ids):
    cdef Py_ssize_t n = ids.shape[0], d = table.shape[1]
    out_arr = np.empty((n, d))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, row
    for i in range(n):
        row = ids[i]
        for j in range(d):
            out[i, j] = table[row, j]
    return out_arr


def embedding_vjp(Py_ssize_t rows, Py_ssize_t dim, long[::1] ids,
                  double[:, ::1] g):
    out_arr = np.zeros((rows, dim))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, row
    for i in range(ids.shape[0]):
        row = ids[i]
        for j in range(dim):
            out[row, j] += g[i, j]
    return out_arr


def attn_scores(double[:, :, ::1] enc, double[:, ::1] q):
    cdef Py_ssize_t b = enc.shape[0], t = enc.shape[1], h = enc.shape[2]
    out_arr = np.empty((b, t))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double acc
    for i in range(b):
        for j in range(t):
            acc = 0.0
            for k in range(h):
                acc += enc[i, j, k] * q[i, k]
            out[i, j] = acc
    return out_arr


def attn_scores_vjp(double[:, :, ::1] enc, double[:, ::1] q,
                    double[:, ::1] g):
    cdef Py_ssize_t b = enc.shape[0], t = enc.shape[1], h = enc.shape[2]
    denc_arr = np.empty((b, t, h))
    dq_arr = np.zeros((b, h))
    cdef double[:, :, ::1] denc = denc_arr
    cdef double[:, ::1] dq = dq_arr
    cdef Py_ssize_t i, j, k
    cdef double gv
    for i in range(b):
        for j in range(t):
            gv = g[i, j]
            for k in range(h):
                denc[i, j, k] = gv * q[i, k]
                dq[i, k] += gv * enc[i, j, k]
    return denc_arr, dq_arr


def attn_context(enc, w):
    return np.einsum("bth,bt->bh", enc, w)


def attn_context_vjp(double[:, :, ::1] enc, double[:, ::1] w,
                     double[:, ::1] g):
    cdef Py_ssize_t b = enc.shape[0], t = enc.shape[1], h = enc.shape[2]
    denc_arr = np.empty((b, t, h))
    dw_arr = np.empty((b, t))
    cdef double[:, :, ::1] denc = denc_arr
    cdef double[:, ::1] dw = dw_arr
    cdef Py_ssize_t i, j, k
    cdef double acc, wv
    for i in range(b):
        for j in range(t):
            wv = w[i, j]
            acc = 0.0
            for k in range(h):
                denc[i, j, k] = wv * g[i, k]
                acc += enc[i, j, k] * g[i, k]
            dw[i, j] = acc
    return denc_arr, dw_arr


def cross_entropy_fwd(double[:, ::1] logits, long[::1] ids,
                      long ignore_id):
    cdef Py_ssize_t n = logits.shape[0], v = logits.shape[1]
    probs_arr = np.empty((n, v))
    cdef double[:, ::1] probs = probs_arr
    cdef Py_ssize_t i, j
    cdef double mx, z, loss = 0.0
    for i in range(n):
        mx = logits[i, 0]
        for j in range(1, v):
            if logits[i, j] > mx:
                mx = logits[i, j]
        z = 0.0
        for j in range(v):
            probs[i, j] = exp(logits[i, j] - mx)
            z += probs[i, j]
        for j in range(v):
            probs[i, j] /= z
        if ids[i] != ignore_id:
            loss -= (logits[i, ids[i]] - mx) - log(z)
    return loss, probs_arr


def cross_entropy_vjp(double[:, ::1] probs, long[::1] ids,
                      long ignore_id, double gscale):
    cdef Py_ssize_t n = probs.shape[0], v = probs.shape[1]
    out_arr = np.empty((n, v))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j
    for i in range(n):
        if ids[i] == ignore_id:
            for j in range(v):
                out[i, j] = 0.0
        else:
            for j in range(v):
                out[i, j] = probs[i, j] * gscale
            out[i, ids[i]] -= gscale
    return out_arr
