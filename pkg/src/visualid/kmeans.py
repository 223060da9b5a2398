"""Lloyd's k-means and the two-stage (train, then cluster) quantization baseline."""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .quantizer import CodebookSet, QuantizerConfig


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list = field(default_factory=list)
    n_iter: int = 0


def _sq_dists(X, C):
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("nkm,nkm->nk", diff, diff)


def _plusplus_init(X, k, rng):
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(X, X[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # remaining points coincide with chosen centers; take the next unused distinct point
            remaining = [i for i in range(n) if not np.any(np.all(X[chosen] == X[i], axis=1))]
            nxt = remaining[0]
        else:
            nxt = int(rng.choice(n, p=d2 / total))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(X, X[nxt:nxt + 1])[:, 0])
    return X[chosen].copy()


def kmeans(points, k, max_iters=100, seed=0) -> KMeansResult:
    """Lloyd iterations from k-means++ seeding.

    Empty clusters are re-seeded at the point farthest from its current
    centroid. Stops at an assignment fixpoint or after ``max_iters``.
    """
    X = np.ascontiguousarray(points, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise ValueError("points must be a non-empty 2-D array")
    if k < 1 or max_iters < 1:
        raise ValueError("need k >= 1 and max_iters >= 1")
    n_distinct = len(np.unique(X, axis=0))
    if k > n_distinct:
        raise ValueError(f"k={k} exceeds the number of distinct points ({n_distinct})")
    rng = np.random.default_rng(seed)
    C = _plusplus_init(X, k, rng)
    assign, d2 = kernels.nearest_codeword(X, C)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iters + 1):
        for j in range(k):
            members = assign == j
            if members.any():
                C[j] = X[members].mean(axis=0)
        counts = np.bincount(assign, minlength=k)
        for j in np.flatnonzero(counts == 0):
            far = int(np.argmax(d2))
            C[j] = X[far]
            d2[far] = 0.0
        new_assign, d2 = kernels.nearest_codeword(X, C)
        history.append(float(d2.sum()))
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    for j in range(k):
        members = assign == j
        if members.any():
            C[j] = X[members].mean(axis=0)
    inertia = float(_sq_dists(X, C)[np.arange(len(X)), assign].sum())
    return KMeansResult(C, assign, inertia, history, it)


def two_stage_fit(features, cfg: QuantizerConfig, seed=0, max_iters=100) -> CodebookSet:
    """Coarse k-means, hard residuals, then per-segment k-means on the residual segments.

    When a level has fewer distinct points than requested codewords, the
    book is padded with copies of its fitted centroids.
    """
    X = np.ascontiguousarray(features, dtype=np.float64)
    if X.shape[1] != cfg.d:
        raise ValueError(f"features have dim {X.shape[1]}, config expects {cfg.d}")

    def fit(points, n, s):
        k = min(n, len(np.unique(points, axis=0)))
        res = kmeans(points, k, max_iters, s)
        if k < n:
            reps = res.centroids[np.arange(n) % k]
            return reps, res.assignments
        return res.centroids, res.assignments

    coarse, a0 = fit(X, cfg.N0, seed)
    R = X - coarse[a0]
    segs = []
    m = cfg.d // cfg.K if cfg.num_segments else 0
    for k in range(cfg.num_segments):
        book, _ = fit(np.ascontiguousarray(R[:, k * m:(k + 1) * m]), cfg.Nk, seed + k + 1)
        segs.append(book)
    return CodebookSet(coarse, segs)
