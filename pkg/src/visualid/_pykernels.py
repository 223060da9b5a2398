"""Pure numpy implementations of the hot quantization kernels.

These are the reference versions; ``_ckernels.pyx`` mirrors them loop for
loop. All inputs are C-contiguous float64 arrays.
"""
import numpy as np

DIST_EPS = 1e-12


def soft_assign_forward(X, C, beta):
    """Batched soft assignment of rows of ``X`` (B, m) against codewords ``C`` (N, m).

    Returns ``(W, D, M)``: weights (B, N), smoothed L2 distances (B, N) and
    the mapped vectors ``W @ C`` (B, m).
    """
    diff = X[:, None, :] - C[None, :, :]
    D = np.sqrt(np.einsum("bnm,bnm->bn", diff, diff) + DIST_EPS)
    logits = -beta * D
    logits -= logits.max(axis=1, keepdims=True)
    W = np.exp(logits)
    W /= W.sum(axis=1, keepdims=True)
    return W, D, W @ C


def soft_assign_backward(X, C, W, D, G, beta):
    """Gradients of ``sum(G * M)`` w.r.t. ``X`` and ``C`` given the forward cache."""
    GW = G @ C.T
    GL = W * (GW - np.einsum("bn,bn->b", W, GW)[:, None])
    coef = -beta * GL / D
    diff = X[:, None, :] - C[None, :, :]
    gX = np.einsum("bn,bnm->bm", coef, diff)
    gC = W.T @ G - np.einsum("bn,bnm->nm", coef, diff)
    return gX, gC


def nearest_codeword(X, C):
    """Index of the closest codeword per row; the lowest index wins ties."""
    diff = X[:, None, :] - C[None, :, :]
    d2 = np.einsum("bnm,bnm->bn", diff, diff)
    idx = np.argmin(d2, axis=1)
    return idx.astype(np.int64), d2[np.arange(X.shape[0]), idx]
