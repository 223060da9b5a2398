"""Two-tower CTR model over user ID, ad ID and the ad's visual IDs.

The visual embedding of an ad is the coarse-ID row plus the concatenation
of the K segment-ID rows. The ad tower sees ``[ad embedding, visual
embedding]``, the user tower sees the user embedding, and a linear head on
``[user feature, ad feature]`` gives the click logit.

Row 0 of the user and ad tables is reserved for ids never seen in training.
"""
from dataclasses import dataclass, field

import numpy as np

from .encoder import MlpEncoderParams, encode_batch, encode_batch_backward, init_mlp
from .numcore import NumericError, Sgd, sigmoid
from .quantizer import VisualId

PROB_CLAMP = 1e-7
# predictions only need to stay strictly inside (0, 1); the loss uses the wider clamp
PRED_CLAMP = 1e-12
OOV = 0


@dataclass(frozen=True)
class ClickRecord:
    user_id: str
    ad_id: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")


@dataclass
class EmbeddingTable:
    rows: np.ndarray

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2:
            raise ValueError("embedding table must be 2-D")

    @property
    def num_entries(self):
        return self.rows.shape[0]

    @property
    def dim(self):
        return self.rows.shape[1]

    def lookup(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if np.any(idx < 0) or np.any(idx >= self.num_entries):
            raise IndexError(f"embedding index out of range [0, {self.num_entries})")
        return self.rows[idx]


@dataclass
class CtrConfig:
    user_dim: int = 16
    ad_dim: int = 16
    visual_dim: int = 16
    tower_hidden: int = 16
    out_dim: int = 16
    use_visual: bool = True
    epochs: int = 20
    lr: float = 0.05
    momentum: float = 0.9
    batch_size: int = 256
    init_std: float = 0.01


@dataclass
class CtrModelParams:
    user_table: EmbeddingTable
    ad_table: EmbeddingTable
    visual0_table: EmbeddingTable | None
    visual_seg_tables: list
    user_tower: MlpEncoderParams
    ad_tower: MlpEncoderParams
    head_w: np.ndarray
    head_b: float
    user_index: dict = field(default_factory=dict)
    ad_index: dict = field(default_factory=dict)

    def __post_init__(self):
        self.head_w = np.asarray(self.head_w, dtype=np.float64)
        D = self.user_tower.out_dim
        if self.ad_tower.out_dim != D:
            raise ValueError("user and ad towers must share an output dim")
        if self.head_w.shape != (2 * D,):
            raise ValueError(f"head weights must have dim {2 * D}")
        if self.visual_seg_tables and self.visual0_table is not None:
            K = len(self.visual_seg_tables)
            if self.visual_dim % K or any(t.dim != self.visual_dim // K for t in self.visual_seg_tables):
                raise ValueError("segment tables must split the visual dim evenly")
        if self.user_tower.in_dim != self.user_table.dim:
            raise ValueError("user tower input does not match user embedding dim")
        if self.ad_tower.in_dim != self.ad_table.dim + self.visual_dim:
            raise ValueError("ad tower input does not match ad + visual embedding dims")

    @property
    def use_visual(self):
        return self.visual0_table is not None

    @property
    def visual_dim(self):
        return self.visual0_table.dim if self.visual0_table is not None else 0

    @property
    def K(self):
        return len(self.visual_seg_tables)

    def tables(self):
        out = [self.user_table, self.ad_table]
        if self.visual0_table is not None:
            out += [self.visual0_table, *self.visual_seg_tables]
        return out

    def arrays(self):
        """All trainable arrays except the scalar head bias."""
        return [*(t.rows for t in self.tables()), *self.user_tower.arrays(), *self.ad_tower.arrays(),
                self.head_w]

    def copy(self):
        return CtrModelParams(
            EmbeddingTable(self.user_table.rows.copy()),
            EmbeddingTable(self.ad_table.rows.copy()),
            None if self.visual0_table is None else EmbeddingTable(self.visual0_table.rows.copy()),
            [EmbeddingTable(t.rows.copy()) for t in self.visual_seg_tables],
            self.user_tower.copy(), self.ad_tower.copy(), self.head_w.copy(), float(self.head_b),
            dict(self.user_index), dict(self.ad_index))


def build_index(ids):
    """Map ids to rows 1..n in sorted order; row 0 stays reserved for unseen ids."""
    return {key: i + 1 for i, key in enumerate(sorted(set(ids)))}


def init_ctr_params(cfg: CtrConfig, records, visual_shape, seed) -> CtrModelParams:
    """``visual_shape`` is ``(N0, [N_1..N_K])``, ignored when ``cfg.use_visual`` is false."""
    rng = np.random.default_rng(seed)
    user_index = build_index(r.user_id for r in records)
    ad_index = build_index(r.ad_id for r in records)
    std = cfg.init_std
    user_table = EmbeddingTable(rng.normal(0, std, size=(len(user_index) + 1, cfg.user_dim)))
    ad_table = EmbeddingTable(rng.normal(0, std, size=(len(ad_index) + 1, cfg.ad_dim)))
    v0, segs, vdim = None, [], 0
    if cfg.use_visual:
        n0, seg_sizes = visual_shape
        vdim = cfg.visual_dim
        if seg_sizes and vdim % len(seg_sizes):
            raise ValueError(f"visual dim {vdim} not divisible by K={len(seg_sizes)}")
        v0 = EmbeddingTable(rng.normal(0, std, size=(n0, vdim)))
        segs = [EmbeddingTable(rng.normal(0, std, size=(n, vdim // len(seg_sizes)))) for n in seg_sizes]
    user_tower = init_mlp([cfg.user_dim, cfg.tower_hidden, cfg.out_dim], rng)
    ad_tower = init_mlp([cfg.ad_dim + vdim, cfg.tower_hidden, cfg.out_dim], rng)
    head_w = rng.normal(0, 1.0 / np.sqrt(2 * cfg.out_dim), size=2 * cfg.out_dim)
    return CtrModelParams(user_table, ad_table, v0, segs, user_tower, ad_tower, head_w, 0.0,
                          user_index, ad_index)


def visual_embedding(ids: VisualId, params: CtrModelParams):
    return visual_embedding_batch(np.array([ids.as_tuple()], dtype=np.int64), params)[0]


def visual_embedding_batch(vids, params: CtrModelParams):
    vids = np.asarray(vids, dtype=np.int64)
    if vids.shape[1] != params.K + 1:
        raise ValueError(f"expected {params.K + 1} visual ids per ad, got {vids.shape[1]}")
    v = params.visual0_table.lookup(vids[:, 0]).copy()
    if params.K:
        m = params.visual_dim // params.K
        for k, t in enumerate(params.visual_seg_tables):
            v[:, k * m:(k + 1) * m] += t.lookup(vids[:, k + 1])
    return v


@dataclass
class EncodedBatch:
    users: np.ndarray
    ads: np.ndarray
    vids: np.ndarray | None
    labels: np.ndarray

    def __len__(self):
        return len(self.users)

    def take(self, idx):
        return EncodedBatch(self.users[idx], self.ads[idx],
                            None if self.vids is None else self.vids[idx], self.labels[idx])


def encode_records(records, params: CtrModelParams, visual_map=None) -> EncodedBatch:
    """Turn click records into index arrays; unseen users/ads map to the reserved row."""
    users = np.array([params.user_index.get(r.user_id, OOV) for r in records], dtype=np.int64)
    ads = np.array([params.ad_index.get(r.ad_id, OOV) for r in records], dtype=np.int64)
    labels = np.array([r.label for r in records], dtype=np.float64)
    vids = None
    if params.use_visual:
        if visual_map is None:
            raise ValueError("visual model needs an ad -> visual id map")
        rows = []
        for r in records:
            vid = visual_map.get(r.ad_id)
            if vid is None:
                raise KeyError(f"no visual id for ad {r.ad_id!r}")
            rows.append(vid.as_tuple())
        vids = np.array(rows, dtype=np.int64).reshape(len(records), params.K + 1)
    return EncodedBatch(users, ads, vids, labels)


def forward_logits(params: CtrModelParams, batch: EncodedBatch):
    u = params.user_table.lookup(batch.users)
    a = params.ad_table.lookup(batch.ads)
    if params.use_visual:
        a = np.concatenate([a, visual_embedding_batch(batch.vids, params)], axis=1)
    uh, u_acts = encode_batch(params.user_tower, u)
    ah, a_acts = encode_batch(params.ad_tower, a)
    z = np.concatenate([uh, ah], axis=1) @ params.head_w + params.head_b
    return z, (uh, ah, u_acts, a_acts)


def predict_batch(params: CtrModelParams, batch: EncodedBatch):
    z, _ = forward_logits(params, batch)
    return np.clip(sigmoid(z), PRED_CLAMP, 1.0 - PRED_CLAMP)


def predict_ctr(user_id, ad_id, params: CtrModelParams, visual_map=None):
    batch = encode_records([ClickRecord(user_id, ad_id, 0)], params, visual_map)
    return float(predict_batch(params, batch)[0])


def bce_loss(yhat, y):
    p = np.clip(np.asarray(yhat, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def loss_and_grads(params: CtrModelParams, batch: EncodedBatch):
    """Mean BCE over the batch (computed from logits) and gradients.

    Returns ``(loss, grads, grad_b)`` with ``grads`` aligned to ``params.arrays()``.
    """
    z, (uh, ah, u_acts, a_acts) = forward_logits(params, batch)
    y = batch.labels
    n = len(y)
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    gz = (sigmoid(z) - y) / n
    D = params.user_tower.out_dim
    g_head_w = np.concatenate([uh, ah], axis=1).T @ gz
    g_b = float(gz.sum())
    gu_tower, g_u = encode_batch_backward(params.user_tower, u_acts, np.outer(gz, params.head_w[:D]))
    ga_tower, g_a_in = encode_batch_backward(params.ad_tower, a_acts, np.outer(gz, params.head_w[D:]))

    g_user = np.zeros_like(params.user_table.rows)
    np.add.at(g_user, batch.users, g_u)
    g_ad = np.zeros_like(params.ad_table.rows)
    Da = params.ad_table.dim
    np.add.at(g_ad, batch.ads, g_a_in[:, :Da])
    table_grads = [g_user, g_ad]
    if params.use_visual:
        gv = g_a_in[:, Da:]
        g0 = np.zeros_like(params.visual0_table.rows)
        np.add.at(g0, batch.vids[:, 0], gv)
        table_grads.append(g0)
        if params.K:
            m = params.visual_dim // params.K
            for k, t in enumerate(params.visual_seg_tables):
                gk = np.zeros_like(t.rows)
                np.add.at(gk, batch.vids[:, k + 1], gv[:, k * m:(k + 1) * m])
                table_grads.append(gk)
    return loss, [*table_grads, *gu_tower, *ga_tower, g_head_w], g_b


def train_ctr(records, visual_map, params: CtrModelParams, epochs, lr, seed, batch_size=256,
              momentum=0.0, on_epoch=None) -> CtrModelParams:
    """Minibatch SGD on mean BCE; works on a copy and returns the trained params."""
    if not records:
        raise ValueError("no training records")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    params = params.copy()
    data = encode_records(records, params, visual_map)
    rng = np.random.default_rng(seed)
    bias = np.array([params.head_b])
    opt = Sgd([*params.arrays(), bias], lr, momentum)
    for epoch in range(epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for start in range(0, len(data), batch_size):
            batch = data.take(order[start:start + batch_size])
            loss, grads, g_b = loss_and_grads(params, batch)
            if not np.isfinite(loss):
                raise NumericError(f"non-finite BCE loss at epoch {epoch}")
            total += loss * len(batch)
            opt.step([*grads, np.array([g_b])])
            params.head_b = float(bias[0])
        if on_epoch is not None:
            on_epoch(epoch, total / len(data), params)
    return params
