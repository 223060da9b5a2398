import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from visualid.evalkit import (
    UNDEFINED,
    SingleClassError,
    auc,
    auc_counts,
    cohort_report_from_scores,
    quantization_error,
    same_id_coherence,
)
from visualid.ctr import ClickRecord
from visualid.kmeans import kmeans, two_stage_fit
from visualid.quantizer import CodebookSet, QuantizerConfig, VisualId, hard_assign_batch

# -- kmeans ---------------------------------------------------------------------


def test_kmeans_fixture():
    res = kmeans(np.array([[0.0], [1.0], [10.0], [11.0]]), 2, seed=3)
    assert sorted(res.centroids.ravel().tolist()) == [0.5, 10.5]
    assert res.inertia == 1.0


def test_kmeans_fixture_is_optimal_partition():
    pts = [0.0, 1.0, 10.0, 11.0]
    best = min(
        sum((p - np.mean([pts[i] for i in range(4) if mask[i] == g])) ** 2 for i, p in enumerate(pts)
            for g in [mask[i]])
        for mask in itertools.product([0, 1], repeat=4) if 0 < sum(mask) < 4)
    assert best == 1.0


def test_kmeans_k_equals_distinct(rng):
    X = rng.normal(size=(5, 2))
    res = kmeans(X, 5)
    assert res.inertia == 0.0
    assert sorted(map(tuple, res.centroids)) == sorted(map(tuple, X))


def test_kmeans_too_many_clusters():
    with pytest.raises(ValueError, match="distinct"):
        kmeans(np.array([[1.0], [1.0], [2.0]]), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_kmeans_monotone_and_reproducible(seed, k):
    X = np.random.default_rng(seed).normal(size=(40, 3))
    res = kmeans(X, k, seed=seed)
    h = res.inertia_history
    assert all(b <= a + 1e-9 for a, b in zip(h, h[1:]))
    again = kmeans(X, k, seed=seed)
    np.testing.assert_array_equal(res.centroids, again.centroids)


def test_two_stage_identical_features():
    X = np.tile([[1.0, 2.0, -1.0, 0.5]], (20, 1))
    books = two_stage_fit(X, QuantizerConfig(d=4, K=2, N0=3, Nk=4))
    ids = hard_assign_batch(X, books)
    assert len({tuple(r) for r in ids}) == 1
    assert books.coarse.shape == (3, 4) and books.seg_sizes == [4, 4]


def test_two_stage_beats_random_books(rng):
    centers = rng.normal(scale=3.0, size=(4, 4))
    X = centers[rng.integers(4, size=100)] + 0.3 * rng.normal(size=(100, 4))
    cfg = QuantizerConfig(d=4, K=2, N0=4, Nk=4)
    err = quantization_error(X, two_stage_fit(X, cfg, seed=0))
    for _ in range(10):
        rand = CodebookSet(rng.normal(scale=3.0, size=(4, 4)), [rng.normal(size=(4, 2)) for _ in range(2)])
        assert err < quantization_error(X, rand)


def test_two_stage_default_shape(rng):
    X = rng.normal(size=(300, 16))
    books = two_stage_fit(X, QuantizerConfig(), seed=0, max_iters=10)
    assert hard_assign_batch(X, books).shape == (300, 5)


# -- auc ----------------------------------------------------------------------


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    twice = sum(2 if p > n else 1 if p == n else 0 for p in pos for n in neg)
    return twice, len(pos), len(neg)


def test_auc_examples():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc([0.1, 0.4, 0.4, 0.8], [0, 0, 1, 1]) == 0.875


def test_auc_single_class():
    with pytest.raises(SingleClassError):
        auc([0.1, 0.2], [1, 1])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=80))
def test_auc_matches_pairwise(data):
    scores = [s / 6 for s, _ in data]
    labels = [y for _, y in data]
    if len(set(labels)) < 2:
        return
    assert auc_counts(scores, labels) == pairwise_auc(scores, labels)


# -- quantization error / coherence ---------------------------------------------


def test_quant_error_examples():
    books = CodebookSet([[0.0, 0.0], [5.0, 5.0]], [[[0.0], [1.0]], [[0.0]]])
    assert quantization_error([[5.0, 5.0], [1.0, 0.0]], books) == 0.0
    assert quantization_error([[0.0, 2.0]], CodebookSet([[0.0, 0.0]], [])) == 4.0


def test_quant_error_superset(rng):
    X = rng.normal(size=(200, 8))
    coarse = rng.normal(size=(4, 8))
    big = [rng.normal(size=(256, 2)) for _ in range(4)]
    small = [b[:64] for b in big]
    assert quantization_error(X, CodebookSet(coarse, big)) <= quantization_error(X, CodebookSet(coarse, small))


def test_coherence_identical():
    X = np.ones((4, 3))
    w, g = same_id_coherence(X, [VisualId(0)] * 4)
    assert w == pytest.approx(1.0) and g == pytest.approx(1.0)


def test_coherence_two_orthogonal_clusters():
    X = np.array([[1.0, 0.0]] * 3 + [[0.0, 1.0]] * 3)
    ids = [VisualId(0)] * 3 + [VisualId(1)] * 3
    w, g = same_id_coherence(X, ids)
    # 15 pairs overall, 6 of them within a cluster with cosine 1
    assert w == 1.0
    assert g == pytest.approx(6 / 15)


def test_coherence_needs_a_group():
    with pytest.raises(ValueError):
        same_id_coherence(np.eye(2), [VisualId(0), VisualId(1)])


# -- cohort report ----------------------------------------------------------------


def test_cohort_all_new():
    recs = [ClickRecord("u", f"a{i}", i % 2) for i in range(6)]
    rep = cohort_report_from_scores(np.linspace(0, 1, 6), recs, {r.ad_id for r in recs})
    assert rep.auc_old_ads == UNDEFINED and rep.n_old == 0 and rep.n_new == 6
    assert 0 <= rep.auc <= 1


def test_cohort_partition(rng):
    recs = [ClickRecord("u", f"a{i % 5}", int(rng.integers(2))) for i in range(50)]
    rep = cohort_report_from_scores(rng.random(50), recs, {"a1", "a3"})
    assert rep.n_new + rep.n_old == 50
