"""Learnable codebooks and the softened two-level residual/product quantizer.

The image feature is first soft-assigned against a coarse codebook; the
remaining residual is split into ``K`` equal segments and each segment is
soft-assigned against its own codebook. The recovered vector is the sum of
the coarse mapping and the concatenated segment mappings. At inference time
the same codebooks give ``K + 1`` hard indices per feature (the visual ID).
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels


@dataclass
class QuantizerConfig:
    d: int = 16
    K: int = 4
    N0: int = 64
    Nk: int = 256
    beta_start: float = 1.0
    beta_end: float = 10.0
    use_residual: bool = True

    def __post_init__(self):
        if self.d <= 0 or self.N0 <= 0:
            raise ValueError("d and N0 must be positive")
        if self.use_residual:
            if self.K <= 0 or self.Nk <= 0:
                raise ValueError("K and Nk must be positive when the residual level is used")
            if self.d % self.K:
                raise ValueError(f"d={self.d} is not divisible by K={self.K}")
        if not 0 < self.beta_start <= self.beta_end:
            raise ValueError("need 0 < beta_start <= beta_end")

    @property
    def num_segments(self):
        return self.K if self.use_residual else 0


@dataclass
class CodebookSet:
    """One coarse codebook of shape (N0, d) plus K segment codebooks of shape (N_k, d/K)."""

    coarse: np.ndarray
    segments: list = field(default_factory=list)

    def __post_init__(self):
        self.coarse = np.asarray(self.coarse, dtype=np.float64)
        self.segments = [np.asarray(s, dtype=np.float64) for s in self.segments]
        if self.coarse.ndim != 2 or self.coarse.shape[0] < 1:
            raise ValueError("coarse codebook must be a non-empty (N0, d) array")
        if self.K:
            if self.d % self.K:
                raise ValueError(f"d={self.d} is not divisible by K={self.K}")
            for k, s in enumerate(self.segments):
                if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] != self.seg_dim:
                    raise ValueError(f"segment book {k} has shape {s.shape}, expected (N_k, {self.seg_dim})")
        if not all(np.all(np.isfinite(b)) for b in self.arrays()):
            raise ValueError("codebooks contain non-finite values")

    @property
    def d(self):
        return self.coarse.shape[1]

    @property
    def K(self):
        return len(self.segments)

    @property
    def N0(self):
        return self.coarse.shape[0]

    @property
    def seg_dim(self):
        return self.d // self.K if self.K else 0

    @property
    def seg_sizes(self):
        return [s.shape[0] for s in self.segments]

    def arrays(self):
        return [self.coarse, *self.segments]

    def copy(self):
        return CodebookSet(self.coarse.copy(), [s.copy() for s in self.segments])

    def num_stored_reals(self):
        return sum(b.size for b in self.arrays())

    def num_cells(self):
        return int(np.prod([self.N0, *self.seg_sizes], dtype=object))


def init_codebooks(cfg: QuantizerConfig, rng) -> CodebookSet:
    std = 1.0 / np.sqrt(cfg.d)
    coarse = rng.normal(0.0, std, size=(cfg.N0, cfg.d))
    segs = [rng.normal(0.0, std, size=(cfg.Nk, cfg.d // cfg.K)) for _ in range(cfg.num_segments)]
    return CodebookSet(coarse, segs)


@dataclass(frozen=True)
class VisualId:
    coarse_id: int
    segment_ids: tuple = ()

    def as_tuple(self):
        return (self.coarse_id, *self.segment_ids)

    def __len__(self):
        return 1 + len(self.segment_ids)

    def __str__(self):
        return ",".join(str(i) for i in self.as_tuple())

    @classmethod
    def parse(cls, text):
        parts = [int(p) for p in text.strip().split(",")]
        return cls(parts[0], tuple(parts[1:]))


@dataclass
class SoftQuantizeResult:
    recovered: np.ndarray
    coarse_weights: np.ndarray
    segment_weights: list
    residual: np.ndarray


# -- single-vector API ------------------------------------------------------

def _check_codewords(x, codewords):
    C = np.atleast_2d(np.asarray(codewords, dtype=np.float64))
    if C.shape[0] == 0 or C.size == 0:
        raise ValueError("empty codeword list")
    if C.shape[1] != x.shape[-1]:
        raise ValueError(f"codeword dim {C.shape[1]} does not match input dim {x.shape[-1]}")
    return C


def soft_assign(x, codewords, beta):
    """Softmax over negative scaled L2 distances; returns ``(weights, mapped)``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    x = np.asarray(x, dtype=np.float64)
    C = _check_codewords(x, codewords)
    W, _, M = kernels.soft_assign_forward(x[None, :], C, beta)
    return W[0], M[0]


def soft_quantize(x, books: CodebookSet, beta, use_residual=True):
    x = np.asarray(x, dtype=np.float64)
    cache = soft_quantize_batch(x[None, :], books, beta, use_residual)
    segw = [w[0] for w in cache.segment_weights]
    if not use_residual:
        segw = [np.full(n, 1.0 / n) for n in books.seg_sizes]
    return SoftQuantizeResult(
        recovered=cache.recovered[0],
        coarse_weights=cache.coarse_weights[0],
        segment_weights=segw,
        residual=cache.residual[0],
    )


def soft_quantize_backward(x, books: CodebookSet, beta, upstream, use_residual=True):
    """Returns ``(grad_x, grad_books)`` where grad_books mirrors ``books.arrays()``."""
    x = np.asarray(x, dtype=np.float64)
    cache = soft_quantize_batch(x[None, :], books, beta, use_residual)
    gX, gbooks = soft_quantize_batch_backward(cache, np.asarray(upstream, dtype=np.float64)[None, :])
    return gX[0], gbooks


# -- batched API used by training ---------------------------------------------

@dataclass
class QuantCache:
    X: np.ndarray
    books: CodebookSet
    beta: float
    use_residual: bool
    coarse_weights: np.ndarray
    coarse_dist: np.ndarray
    coarse_mapped: np.ndarray
    residual: np.ndarray
    segment_inputs: list
    segment_weights: list
    segment_dist: list
    recovered: np.ndarray


def soft_quantize_batch(X, books: CodebookSet, beta, use_residual=True) -> QuantCache:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if beta <= 0:
        raise ValueError("beta must be positive")
    if X.shape[1] != books.d:
        raise ValueError(f"feature dim {X.shape[1]} does not match codebook dim {books.d}")
    W0, D0, Xbar = kernels.soft_assign_forward(X, books.coarse, beta)
    if not use_residual or books.K == 0:
        return QuantCache(X, books, beta, False, W0, D0, Xbar, np.zeros_like(X), [], [], [], Xbar)
    R = X - Xbar
    m = books.seg_dim
    seg_in, seg_w, seg_d, parts = [], [], [], []
    for k, Ck in enumerate(books.segments):
        Rk = np.ascontiguousarray(R[:, k * m:(k + 1) * m])
        Wk, Dk, Mk = kernels.soft_assign_forward(Rk, Ck, beta)
        seg_in.append(Rk)
        seg_w.append(Wk)
        seg_d.append(Dk)
        parts.append(Mk)
    recovered = np.concatenate(parts, axis=1) + Xbar
    return QuantCache(X, books, beta, True, W0, D0, Xbar, R, seg_in, seg_w, seg_d, recovered)


def soft_quantize_batch_backward(cache: QuantCache, G):
    """Backward pass of :func:`soft_quantize_batch` for upstream gradient ``G`` on the recovered vectors."""
    books, beta = cache.books, cache.beta
    G = np.ascontiguousarray(G, dtype=np.float64)
    if not cache.use_residual:
        gX, gC0 = kernels.soft_assign_backward(
            cache.X, books.coarse, cache.coarse_weights, cache.coarse_dist, G, beta)
        return gX, [gC0, *[np.zeros_like(s) for s in books.segments]]
    m = books.seg_dim
    gR = np.empty_like(cache.X)
    gsegs = []
    for k, Ck in enumerate(books.segments):
        gRk, gCk = kernels.soft_assign_backward(
            cache.segment_inputs[k], Ck, cache.segment_weights[k], cache.segment_dist[k],
            G[:, k * m:(k + 1) * m], beta)
        gR[:, k * m:(k + 1) * m] = gRk
        gsegs.append(gCk)
    # recovered = concat(seg maps of X - Xbar) + Xbar
    gXbar = G - gR
    gX0, gC0 = kernels.soft_assign_backward(
        cache.X, books.coarse, cache.coarse_weights, cache.coarse_dist, gXbar, beta)
    return gR + gX0, [gC0, *gsegs]


# -- hard IDs ---------------------------------------------------------------

def hard_assign_batch(X, books: CodebookSet):
    """Hard visual IDs for every row of ``X`` as an int array of shape (B, K+1)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != books.d:
        raise ValueError(f"expected features of dim {books.d}")
    ids = np.empty((X.shape[0], books.K + 1), dtype=np.int64)
    ids[:, 0], _ = kernels.nearest_codeword(X, books.coarse)
    R = X - books.coarse[ids[:, 0]]
    m = books.seg_dim
    for k, Ck in enumerate(books.segments):
        ids[:, k + 1], _ = kernels.nearest_codeword(R[:, k * m:(k + 1) * m], Ck)
    return ids


def hard_visual_id(x, books: CodebookSet) -> VisualId:
    row = hard_assign_batch(np.asarray(x, dtype=np.float64)[None, :], books)[0]
    return VisualId(int(row[0]), tuple(int(i) for i in row[1:]))


def hard_decode_batch(ids, books: CodebookSet):
    ids = np.asarray(ids, dtype=np.int64)
    out = books.coarse[ids[:, 0]].copy()
    m = books.seg_dim
    for k, Ck in enumerate(books.segments):
        out[:, k * m:(k + 1) * m] += Ck[ids[:, k + 1]]
    return out


def hard_decode(vid: VisualId, books: CodebookSet):
    return hard_decode_batch(np.array([vid.as_tuple()]), books)[0]


def beta_at(epoch, total_epochs, cfg: QuantizerConfig):
    """Linear annealing from ``beta_start`` at epoch 0 to ``beta_end`` at the last epoch."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    frac = epoch / max(1, total_epochs - 1)
    return cfg.beta_start + (cfg.beta_end - cfg.beta_start) * frac
