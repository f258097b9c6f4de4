"""Numpy/scipy implementations of the compiled inner loops (import-time fallback)."""

import numpy as np
import scipy.sparse as sps


def sparse_gram(a_ptr, a_keys, a_vals, b_ptr, b_keys, b_vals):
    vocab, inv = np.unique(np.concatenate([a_keys, b_keys]), return_inverse=True)
    inv = inv.reshape(-1)
    na, nb = len(a_ptr) - 1, len(b_ptr) - 1
    A = sps.csr_matrix((a_vals, inv[: a_keys.size], a_ptr), shape=(na, vocab.size))
    B = sps.csr_matrix((b_vals, inv[a_keys.size:], b_ptr), shape=(nb, vocab.size))
    return np.asarray((A @ B.T).todense())


def rbf_gram(X, Y, inv_ls, signal_variance):
    Xs = np.asarray(X) * inv_ls
    Ys = np.asarray(Y) * inv_ls
    sq = (Xs * Xs).sum(1)[:, None] + (Ys * Ys).sum(1)[None, :] - 2.0 * Xs @ Ys.T
    np.maximum(sq, 0.0, out=sq)
    return signal_variance * np.exp(-0.5 * sq)


def hamming_min(V, anchors):
    V = np.asarray(V)
    out = np.full(V.shape[0], V.shape[1] + 1, dtype=np.int64)
    for a in np.asarray(anchors):
        np.minimum(out, (V != a).sum(1), out=out)
    return out
