"""Numpy implementations of the dense kernels.

This is the fallback backend; `metamr.kernels._ckernels` implements the
same functions in C. Arrays are float64 and C-contiguous, ids are int64.
"""
import numpy as np

BACKEND = "python"


def matmul(a, b):
    return a @ b


def matmul_nt(a, b):
    return a @ b.T


def matmul_tn(a, b):
    return a.T @ b


def ewadd(a, b):
    return a + b


def ewmul(a, b):
    return a * b


def affine(a, mul, add):
    return a * mul + add


def add_rowbias(m, b):
    return m + b[None, :]


def colsum(m):
    return m.sum(axis=0)


def tanh(x):
    return np.tanh(x)


def tanh_vjp(y, g):
    return g * (1.0 - y * y)


def sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_vjp(y, g):
    return g * y * (1.0 - y)


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def softmax_rows_vjp(y, g):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


def embedding_fwd(table, ids):
    return table[ids]


def embedding_vjp(rows, dim, ids, g):
    out = np.zeros((rows, dim))
    np.add.at(out, ids, g)
    return out


def attn_scores(enc, q):
    # enc: (B, T, H), q: (B, H) -> (B, T)
    return np.einsum("bth,bh->bt", enc, q)


def attn_scores_vjp(enc, q, g):
    d_enc = g[:, :, None] * q[:, None, :]
    d_q = np.einsum("bth,bt->bh", enc, g)
    return d_enc, d_q


def attn_context(enc, w):
    # enc: (B, T, H), w: (B, T) -> (B, H)
    return np.einsum("bth,bt->bh", enc, w)


def attn_context_vjp(enc, w, g):
    d_enc = w[:, :, None] * g[:, None, :]
    d_w = np.einsum("bth,bh->bt", enc, g)
    return d_enc, d_w


def cross_entropy_fwd(logits, ids, ignore_id):
    # logits: (N, V), ids: (N,) -> (sum of -log p over kept rows, probs)
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    z = ex.sum(axis=1)
    probs = ex / z[:, None]
    keep = ids != ignore_id
    rows = np.nonzero(keep)[0]
    logp = shifted[rows, ids[rows]] - np.log(z[rows])
    return float(-logp.sum()), probs


def cross_entropy_vjp(probs, ids, ignore_id, gscale):
    d = probs.copy()
    n = d.shape[0]
    keep = ids != ignore_id
    d[np.arange(n), np.where(keep, ids, 0)] -= keep
    d[~keep] = 0.0
    return d * gscale
