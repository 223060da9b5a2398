"""Small ReLU MLPs standing in for the image and text feature extractors.

Weights are stored as (out, in) matrices, so a layer computes ``h @ W.T + b``.
The final layer is a linear projection with no activation.
"""
from dataclasses import dataclass

import numpy as np


@dataclass
class MlpEncoderParams:
    weights: list
    biases: list
    activation: str = "relu"

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise ValueError("need one bias per weight matrix and at least one layer")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {i}: weight {w.shape} and bias {b.shape} do not agree")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ValueError(f"layer {i} input dim {w.shape[1]} does not chain")

    @property
    def in_dim(self):
        return self.weights[0].shape[1]

    @property
    def out_dim(self):
        return self.weights[-1].shape[0]

    @property
    def dims(self):
        return [self.in_dim, *(w.shape[0] for w in self.weights)]

    def arrays(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self):
        return MlpEncoderParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(dims, rng) -> MlpEncoderParams:
    """Gaussian weights with std 1/sqrt(fan_in), zero biases."""
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        ws.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpEncoderParams(ws, bs)


def encode_batch(params: MlpEncoderParams, X):
    """Forward pass over a batch; returns the output and the per-layer inputs for backprop."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[-1] != params.in_dim:
        raise ValueError(f"input dim {X.shape[-1]} does not match encoder input dim {params.in_dim}")
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w.T + b
        if i < last:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return h, acts


def encode_batch_backward(params: MlpEncoderParams, acts, G):
    """Gradients for every weight/bias (in ``params.arrays()`` order) and for the input."""
    grads = [None] * (2 * len(params.weights))
    g = np.asarray(G, dtype=np.float64)
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            g = g * (acts[i + 1] > 0.0)
        grads[2 * i] = g.T @ acts[i]
        grads[2 * i + 1] = g.sum(axis=0)
        g = g @ params.weights[i]
    return grads, g


def encode(params: MlpEncoderParams, raw):
    raw = np.asarray(raw, dtype=np.float64)
    out, _ = encode_batch(params, raw[None, :])
    return out[0]


def encode_backward(params: MlpEncoderParams, raw, upstream):
    """Single-example gradients; returns ``(grad_params, grad_raw)``."""
    raw = np.asarray(raw, dtype=np.float64)
    _, acts = encode_batch(params, raw[None, :])
    grads, graw = encode_batch_backward(params, acts, np.asarray(upstream, dtype=np.float64)[None, :])
    return grads, graw[0]
