import math

import numpy as np
import pytest

from conftest import check_arrays
from visualid.contrastive import (
    PairBatch,
    batch_loss_and_grads,
    contrastive_loss,
    init_state,
    make_batches,
    train_epoch,
)
from visualid.encoder import MlpEncoderParams, encode, encode_backward, encode_batch, init_mlp
from visualid.numcore import NumericError
from visualid.quantizer import CodebookSet, QuantizerConfig

# -- encoder ----------------------------------------------------------------------


def test_zero_encoder_outputs_zero(rng):
    p = init_mlp([3, 5, 2], rng)
    p = MlpEncoderParams([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])
    np.testing.assert_array_equal(encode(p, rng.normal(size=3)), np.zeros(2))


def test_identity_layer():
    p = MlpEncoderParams([np.eye(3)], [np.zeros(3)])
    x = np.array([-1.0, 2.0, -3.5])
    np.testing.assert_array_equal(encode(p, x), x)


def test_hand_computed_two_layer():
    W1 = np.array([[1.0, -1.0], [2.0, 0.5], [-1.0, -1.0]])
    b1 = np.array([0.0, -1.0, 0.5])
    W2 = np.array([[1.0, 2.0, 3.0]])
    b2 = np.array([0.25])
    x = np.array([2.0, 1.0])
    # hidden pre-activations: [1, 3.5, -2.5] -> relu [1, 3.5, 0]; output 1 + 7 + 0 + 0.25
    out = encode(MlpEncoderParams([W1, W2], [b1, b2]), x)
    assert out[0] == pytest.approx(8.25, abs=1e-12)


def test_encoder_dim_mismatch(rng):
    with pytest.raises(ValueError):
        encode(init_mlp([3, 2], rng), np.zeros(4))


def test_encoder_backward_zero_upstream(rng):
    p = init_mlp([3, 4, 2], rng)
    grads, gx = encode_backward(p, rng.normal(size=3), np.zeros(2))
    assert not gx.any() and not any(g.any() for g in grads)


def test_linear_layer_outer_product(rng):
    p = init_mlp([3, 2], rng)
    x, up = rng.normal(size=3), rng.normal(size=2)
    grads, _ = encode_backward(p, x, up)
    np.testing.assert_allclose(grads[0], np.outer(up, x))
    np.testing.assert_allclose(grads[1], up)


def test_encoder_finite_difference(rng):
    p = init_mlp([4, 6, 3], rng)
    for b in p.biases:
        b += 0.1 * rng.normal(size=b.shape)
    x, up = rng.normal(size=4), rng.normal(size=3)
    grads, gx = encode_backward(p, x, up)

    def loss(arrs):
        q = MlpEncoderParams([arrs[1], arrs[3]], [arrs[2], arrs[4]])
        return float(encode(q, arrs[0]) @ up)

    rep = check_arrays(loss, [x, *p.arrays()], [gx, *grads])
    assert rep.max_rel_error < 1e-4, rep


def test_encode_deterministic(rng):
    p = init_mlp([4, 8, 3], rng)
    X = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(encode_batch(p, X)[0], encode_batch(p, X)[0])


# -- contrastive loss -------------------------------------------------------------


def test_single_pair_loss_zero(rng):
    loss, gx, gy = contrastive_loss(rng.normal(size=(1, 3)), rng.normal(size=(1, 3)))
    assert loss == 0.0
    assert not gx.any() and not gy.any()


def test_identity_similarity_loss():
    X = np.eye(2)
    loss, _, _ = contrastive_loss(X, X)
    expected = -2 * math.log(math.e / (math.e + 1))
    assert loss == pytest.approx(expected, abs=1e-12)
    assert loss == pytest.approx(0.62652, abs=1e-5)


def test_identity_beats_uniform():
    X = np.eye(3)
    aligned, _, _ = contrastive_loss(X, X)
    uniform, _, _ = contrastive_loss(X, np.ones((3, 3)))
    assert aligned < uniform


def test_loss_permutation_invariant(rng):
    X, Y = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
    perm = rng.permutation(5)
    assert contrastive_loss(X, Y)[0] == pytest.approx(contrastive_loss(X[perm], Y[perm])[0], abs=1e-10)


def test_loss_zero_norm_error():
    with pytest.raises(NumericError, match="zero-norm"):
        contrastive_loss(np.array([[0.0, 0.0], [1.0, 0.0]]), np.eye(2))


@pytest.mark.parametrize("B", [3, 4])
def test_loss_finite_difference(rng, B):
    X, Y = rng.normal(size=(B, 3)), rng.normal(size=(B, 3))
    _, gx, gy = contrastive_loss(X, Y)
    rep = check_arrays(lambda a: contrastive_loss(a[0], a[1])[0], [X, Y], [gx, gy])
    assert rep.max_rel_error < 1e-4, rep


def _tiny_state(rng, residual=True):
    cfg = QuantizerConfig(d=4, K=2, N0=3, Nk=3, use_residual=residual)
    state = init_state(cfg, [5, 6, 4], [5, 6, 4], seed=int(rng.integers(1000)))
    return state


@pytest.mark.parametrize("residual", [True, False])
def test_end_to_end_finite_difference(rng, residual):
    state = _tiny_state(rng, residual)
    batch = PairBatch(rng.normal(size=(3, 5)), rng.normal(size=(3, 5)), ["a", "b", "c"])
    beta = 2.5
    loss, grads = batch_loss_and_grads(state, batch, beta)
    n_img = len(state.img_encoder.arrays())
    n_txt = len(state.txt_encoder.arrays())

    def f(arrs):
        s = _tiny_state(np.random.default_rng(0), residual)
        s.img_encoder = MlpEncoderParams(arrs[0:n_img:2], arrs[1:n_img:2])
        s.txt_encoder = MlpEncoderParams(arrs[n_img:n_img + n_txt:2], arrs[n_img + 1:n_img + n_txt:2])
        s.books = CodebookSet(arrs[n_img + n_txt], arrs[n_img + n_txt + 1:])
        return batch_loss_and_grads(s, batch, beta)[0]

    rep = check_arrays(f, state.param_arrays(), grads)
    assert rep.max_rel_error < 1e-4, rep


def test_train_epoch_zero_lr_keeps_params(rng):
    state = _tiny_state(rng)
    before = [a.copy() for a in state.param_arrays()]
    batches = make_batches(rng.normal(size=(6, 5)), rng.normal(size=(6, 5)), list("abcdef"), 3)
    train_epoch(state, batches, 0.0, total_epochs=1)
    assert len(state.loss_history) == 1 and state.epoch == 1
    for a, b in zip(before, state.param_arrays()):
        np.testing.assert_array_equal(a, b)


def test_train_epoch_single_pair_batch(rng):
    state = _tiny_state(rng)
    before = [a.copy() for a in state.param_arrays()]
    batches = make_batches(rng.normal(size=(1, 5)), rng.normal(size=(1, 5)), ["a"], 1)
    train_epoch(state, batches, 0.5, total_epochs=1)
    assert state.loss_history == [0.0]
    for a, b in zip(before, state.param_arrays()):
        np.testing.assert_array_equal(a, b)


def test_train_epoch_deterministic(rng):
    img, txt = rng.normal(size=(8, 5)), rng.normal(size=(8, 5))
    runs = []
    for _ in range(2):
        state = _tiny_state(np.random.default_rng(3))
        train_epoch(state, make_batches(img, txt, list("abcdefgh"), 2, shuffle_seed=4), 0.05, total_epochs=2)
        runs.append(state.param_arrays())
    for a, b in zip(*runs):
        np.testing.assert_array_equal(a, b)

