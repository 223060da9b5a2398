"""Evaluation metrics: AUC, quantization error, same-ID coherence and cohort reports."""
import math
from dataclasses import asdict, dataclass

import numpy as np

from .ctr import encode_records, predict_batch
from .quantizer import CodebookSet, hard_assign_batch, hard_decode_batch

UNDEFINED = "undefined"


class SingleClassError(ValueError):
    pass


def auc_counts(scores, labels):
    """Return ``(twice_concordant_plus_ties, n_pos, n_neg)`` as exact integers.

    AUC is the first value divided by ``2 * n_pos * n_neg``.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    y = y.astype(bool)
    n_pos = int(y.sum())
    n_neg = int(len(y) - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClassError("AUC needs at least one positive and one negative label")
    order = np.argsort(s, kind="mergesort")
    s, y = s[order], y[order]
    # group equal scores; each group contributes pos_in * neg_below + pos_in * neg_in / 2
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    pos_g = np.add.reduceat(y.astype(np.int64), starts)
    size_g = np.diff(np.r_[starts, len(s)])
    neg_g = size_g - pos_g
    neg_below = np.cumsum(neg_g) - neg_g
    twice = int(2 * np.sum(pos_g * neg_below) + np.sum(pos_g * neg_g))
    return twice, n_pos, n_neg


def auc(scores, labels):
    """Mann-Whitney AUC with half credit for tied scores."""
    twice, n_pos, n_neg = auc_counts(scores, labels)
    return twice / (2 * n_pos * n_neg)


def quantization_error(features, books: CodebookSet):
    """Mean squared L2 distance between each feature and the decode of its hard visual ID."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    ids = hard_assign_batch(X, books)
    diff = X - hard_decode_batch(ids, books)
    return float(np.mean(np.einsum("nd,nd->n", diff, diff)))


def _mean_pair_cos(Xn, groups):
    total, count = 0.0, 0
    for idx in groups:
        if len(idx) < 2:
            continue
        G = Xn[idx] @ Xn[idx].T
        n = len(idx)
        total += (G.sum() - np.trace(G)) / 2.0
        count += n * (n - 1) // 2
    return total, count


def same_id_coherence(features, ids):
    """Mean pairwise cosine similarity within identical-ID groups and over all pairs."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    keys = [tuple(i.as_tuple()) if hasattr(i, "as_tuple") else tuple(np.atleast_1d(i)) for i in ids]
    if len(keys) != len(X):
        raise ValueError("one id per feature required")
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm feature")
    Xn = X / norms
    groups = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    within_sum, within_n = _mean_pair_cos(Xn, groups.values())
    if within_n == 0:
        raise ValueError("no visual id is shared by two or more features")
    all_sum, all_n = _mean_pair_cos(Xn, [list(range(len(X)))])
    return within_sum / within_n, all_sum / all_n


@dataclass
class EvalReport:
    auc: float
    auc_new_ads: object
    auc_old_ads: object
    n_new: int
    n_old: int
    mean_quant_error: object = UNDEFINED
    baseline: bool = False

    def as_dict(self):
        return asdict(self)


def _auc_or_undefined(scores, labels):
    if len(labels) == 0:
        return UNDEFINED
    try:
        return auc(scores, labels)
    except SingleClassError:
        return UNDEFINED


def cohort_report(model, records, visual_map, new_ad_ids, quant_error=UNDEFINED) -> EvalReport:
    """AUC overall and split by new (unseen in training) vs old ads."""
    scores = predict_batch(model, encode_records(records, model, visual_map))
    return cohort_report_from_scores(scores, records, new_ad_ids, quant_error, baseline=not model.use_visual)


def cohort_report_from_scores(scores, records, new_ad_ids, quant_error=UNDEFINED, baseline=False):
    labels = np.array([r.label for r in records])
    scores = np.asarray(scores, dtype=np.float64)
    is_new = np.array([r.ad_id in new_ad_ids for r in records], dtype=bool)
    return EvalReport(
        auc=_auc_or_undefined(scores, labels),
        auc_new_ads=_auc_or_undefined(scores[is_new], labels[is_new]),
        auc_old_ads=_auc_or_undefined(scores[~is_new], labels[~is_new]),
        n_new=int(is_new.sum()),
        n_old=int((~is_new).sum()),
        mean_quant_error=quant_error,
        baseline=baseline,
    )


def is_defined(value):
    return not (isinstance(value, str) or (isinstance(value, float) and math.isnan(value)))
