"""Synthetic image/text pairs and click logs with planted cluster structure.

Every ad owns one image/text pair. Pairs are drawn from ``G`` latent
clusters; a pair's latent point is its cluster center plus a per-pair
jitter that both views share, and each view adds its own observation noise
after a fixed random linear map. Click probability depends on the user and
on the ad's cluster only, so visual content is the sole ad-side signal that
transfers to ads never seen in training.
"""
from dataclasses import dataclass

import numpy as np

from .ctr import ClickRecord


@dataclass
class SynthConfig:
    num_clusters: int = 4
    d_img_raw: int = 32
    d_txt_raw: int = 32
    num_pairs: int = 400
    num_users: int = 500
    num_ads: int = 400
    num_clicks: int = 50_000
    noise_sigma: float = 0.1
    cold_start_fraction: float = 0.1
    seed: int = 0
    latent_dim: int = 8
    # per-pair shared jitter, in units of noise_sigma
    pair_jitter: float = 3.0
    cluster_effect_std: float = 1.5
    user_bias_std: float = 1.0
    user_affinity_std: float = 0.5
    click_offset: float = 0.0
    eval_fraction: float = 0.2

    def __post_init__(self):
        for name in ("num_clusters", "d_img_raw", "d_txt_raw", "num_pairs", "num_users",
                     "num_ads", "num_clicks", "latent_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0 <= self.cold_start_fraction < 1:
            raise ValueError("cold_start_fraction must be in [0, 1)")
        if not 0 < self.eval_fraction < 1:
            raise ValueError("eval_fraction must be in (0, 1)")


@dataclass
class PairRecord:
    pair_id: str
    image_raw: np.ndarray
    text_raw: np.ndarray
    cluster: int


def pair_id_for(i):
    return f"ad{i:05d}"


def generate_pairs(cfg: SynthConfig):
    """One pair per ad, ``num_pairs`` in total, in a cluster-interleaved random order."""
    rng = np.random.default_rng([cfg.seed, 1])
    L = cfg.latent_dim
    centers = rng.normal(0.0, 1.0, size=(cfg.num_clusters, L))
    A = rng.normal(0.0, 1.0 / np.sqrt(L), size=(cfg.d_img_raw, L))
    Bm = rng.normal(0.0, 1.0 / np.sqrt(L), size=(cfg.d_txt_raw, L))
    clusters = rng.integers(0, cfg.num_clusters, size=cfg.num_pairs)
    s = cfg.noise_sigma
    z = centers[clusters] + s * cfg.pair_jitter * rng.normal(size=(cfg.num_pairs, L))
    img = z @ A.T + s * rng.normal(size=(cfg.num_pairs, cfg.d_img_raw))
    txt = z @ Bm.T + s * rng.normal(size=(cfg.num_pairs, cfg.d_txt_raw))
    return [PairRecord(pair_id_for(i), img[i], txt[i], int(clusters[i])) for i in range(cfg.num_pairs)]


def generate_clicks(cfg: SynthConfig, ad_cluster: dict, affinity=None):
    """Sample click records; returns ``(train, eval, new_ad_ids)``.

    ``affinity`` overrides the (num_users, G) user-by-cluster logit table.
    A ``cold_start_fraction`` of ads only ever appears in the eval split.
    """
    rng = np.random.default_rng([cfg.seed, 2])
    ads = sorted(ad_cluster)
    if not ads:
        raise ValueError("no ads to generate clicks for")
    G = max(ad_cluster.values()) + 1
    if affinity is None:
        effect = rng.normal(0.0, cfg.cluster_effect_std, size=G)
        affinity = effect[None, :] + rng.normal(0.0, cfg.user_affinity_std, size=(cfg.num_users, G))
    affinity = np.asarray(affinity, dtype=np.float64)
    bias = rng.normal(0.0, cfg.user_bias_std, size=cfg.num_users) + cfg.click_offset

    n_new = int(round(cfg.cold_start_fraction * len(ads)))
    new_ads = set(rng.choice(ads, size=n_new, replace=False).tolist()) if n_new else set()

    users = rng.integers(0, cfg.num_users, size=cfg.num_clicks)
    ad_idx = rng.integers(0, len(ads), size=cfg.num_clicks)
    cl = np.array([ad_cluster[ads[j]] for j in ad_idx])
    logit = np.clip(affinity[users, cl] + bias[users], -50, 50)
    p = 1.0 / (1.0 + np.exp(-logit))
    labels = (rng.random(cfg.num_clicks) < p).astype(int)
    to_eval = rng.random(cfg.num_clicks) < cfg.eval_fraction

    train, held = [], []
    for u, j, y, ev in zip(users, ad_idx, labels, to_eval):
        rec = ClickRecord(f"u{u:05d}", ads[j], int(y))
        if ads[j] in new_ads or ev:
            held.append(rec)
        else:
            train.append(rec)
    return train, held, new_ads
