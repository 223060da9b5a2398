"""Joint training of both encoders and the codebooks with a symmetric contrastive loss."""
from dataclasses import dataclass, field

import numpy as np

from .encoder import MlpEncoderParams, encode_batch, encode_batch_backward, init_mlp
from .numcore import NumericError, Sgd, log_softmax, stable_softmax
from .quantizer import (
    CodebookSet,
    QuantizerConfig,
    beta_at,
    init_codebooks,
    soft_quantize_batch,
    soft_quantize_batch_backward,
)


@dataclass
class PairBatch:
    image_raw: np.ndarray
    text_raw: np.ndarray
    pair_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.image_raw = np.atleast_2d(np.asarray(self.image_raw, dtype=np.float64))
        self.text_raw = np.atleast_2d(np.asarray(self.text_raw, dtype=np.float64))
        if len(self.image_raw) != len(self.text_raw) or len(self.image_raw) < 1:
            raise ValueError("a batch needs B >= 1 images and the same number of texts")
        if self.pair_ids and len(self.pair_ids) != len(self.image_raw):
            raise ValueError("pair_ids length does not match batch size")

    def __len__(self):
        return len(self.image_raw)


@dataclass
class TrainState:
    img_encoder: MlpEncoderParams
    txt_encoder: MlpEncoderParams
    books: CodebookSet
    cfg: QuantizerConfig
    epoch: int = 0
    loss_history: list = field(default_factory=list)

    def param_arrays(self):
        return [*self.img_encoder.arrays(), *self.txt_encoder.arrays(), *self.books.arrays()]


def init_state(cfg: QuantizerConfig, img_dims, txt_dims, seed) -> TrainState:
    """Fresh state; ``img_dims``/``txt_dims`` are layer widths ending in ``cfg.d``."""
    if img_dims[-1] != cfg.d or txt_dims[-1] != cfg.d:
        raise ValueError(f"both encoders must output dim d={cfg.d}")
    rng = np.random.default_rng(seed)
    img = init_mlp(img_dims, rng)
    txt = init_mlp(txt_dims, rng)
    books = init_codebooks(cfg, rng)
    return TrainState(img, txt, books, cfg)


def _normalize_rows(X, name):
    n = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(n == 0.0):
        raise NumericError(f"zero-norm vector in {name}")
    return X / n, n


def contrastive_loss(xhat, y):
    """Symmetric InfoNCE over raw cosine similarities (no temperature).

    ``S[j, i] = sim(xhat_j, y_i)``; the loss averages, over pairs ``i``, the
    negative log-probability of the matching entry under a softmax along the
    image axis (column ``i``) plus one along the text axis (row ``i``).

    Returns ``(loss, grad_xhat, grad_y)``.
    """
    X = np.atleast_2d(np.asarray(xhat, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if X.shape != Y.shape:
        raise ValueError(f"shape mismatch {X.shape} vs {Y.shape}")
    B = X.shape[0]
    Xn, nx = _normalize_rows(X, "xhat")
    Yn, ny = _normalize_rows(Y, "y")
    S = Xn @ Yn.T
    diag = np.arange(B)
    loss = -(log_softmax(S, axis=0)[diag, diag].sum() + log_softmax(S, axis=1)[diag, diag].sum()) / B
    GS = (stable_softmax(S, axis=0) + stable_softmax(S, axis=1)) / B
    GS[diag, diag] -= 2.0 / B
    gXn = GS @ Yn
    gYn = GS.T @ Xn
    gX = (gXn - np.sum(gXn * Xn, axis=1, keepdims=True) * Xn) / nx
    gY = (gYn - np.sum(gYn * Yn, axis=1, keepdims=True) * Yn) / ny
    return float(loss), gX, gY


def batch_loss_and_grads(state: TrainState, batch: PairBatch, beta, use_residual=None):
    """Full forward/backward for one batch. Gradients follow ``state.param_arrays()`` order."""
    if use_residual is None:
        use_residual = state.cfg.use_residual
    X, img_acts = encode_batch(state.img_encoder, batch.image_raw)
    Y, txt_acts = encode_batch(state.txt_encoder, batch.text_raw)
    cache = soft_quantize_batch(X, state.books, beta, use_residual)
    loss, gXhat, gY = contrastive_loss(cache.recovered, Y)
    gX, gbooks = soft_quantize_batch_backward(cache, gXhat)
    gimg, _ = encode_batch_backward(state.img_encoder, img_acts, gX)
    gtxt, _ = encode_batch_backward(state.txt_encoder, txt_acts, gY)
    return loss, [*gimg, *gtxt, *gbooks]


def raw_feature_loss_and_grads(state: TrainState, batch: PairBatch):
    """Contrastive loss on unquantized image features (first stage of the two-stage baseline)."""
    X, img_acts = encode_batch(state.img_encoder, batch.image_raw)
    Y, txt_acts = encode_batch(state.txt_encoder, batch.text_raw)
    loss, gX, gY = contrastive_loss(X, Y)
    gimg, _ = encode_batch_backward(state.img_encoder, img_acts, gX)
    gtxt, _ = encode_batch_backward(state.txt_encoder, txt_acts, gY)
    return loss, [*gimg, *gtxt, *[np.zeros_like(b) for b in state.books.arrays()]]


def make_batches(image_raw, text_raw, pair_ids, batch_size, shuffle_seed=None):
    n = len(image_raw)
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(n)
    batches = []
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        batches.append(PairBatch(np.asarray(image_raw)[idx], np.asarray(text_raw)[idx],
                                 [pair_ids[i] for i in idx]))
    return batches


def train_epoch(state: TrainState, batches, lr, total_epochs, quantize=True, momentum=0.0,
                optimizer=None) -> TrainState:
    """One pass over ``batches`` with SGD; mutates and returns ``state``.

    Pass the same ``optimizer`` across epochs to carry momentum over; without
    one, a fresh :class:`Sgd` with ``lr``/``momentum`` is used for this epoch.

    With ``quantize=False`` the codebooks are left alone and the loss is taken
    on raw image features.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    beta = beta_at(min(state.epoch, total_epochs - 1), total_epochs, state.cfg)
    if optimizer is None:
        optimizer = Sgd(state.param_arrays(), lr, momentum)
    losses = []
    for batch in batches:
        if quantize:
            loss, grads = batch_loss_and_grads(state, batch, beta)
        else:
            loss, grads = raw_feature_loss_and_grads(state, batch)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite contrastive loss at epoch {state.epoch}")
        losses.append(loss)
        optimizer.step(grads)
    state.loss_history.append(float(np.mean(losses)))
    state.epoch += 1
    return state
