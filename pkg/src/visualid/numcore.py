"""Small dense-math helpers shared by the learning modules.

Vectors and matrices are plain float64 numpy arrays. Every forward op used
in training has a matching backward function next to it in its own module;
this file only holds the pieces they have in common plus the gradient
checker used by the test suite.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

NORM_EPS = 1e-12


class NumericError(ValueError):
    """Raised on non-finite values or degenerate inputs (zero norms, empty vectors)."""


def as_vector(x, name="vector"):
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ValueError(f"{name} is empty")
    return v


def check_finite(arr, name):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values in {name}")
    return arr


def cosine_similarity(x, y):
    x = as_vector(x, "x")
    y = as_vector(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.size} vs {y.size}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise NumericError("cosine similarity undefined for a zero-norm vector")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def stable_softmax(logits, axis=-1):
    """Softmax with the max logit subtracted first.

    Accepts a vector or a batch (softmax taken along ``axis``).
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.size == 0:
        raise ValueError("softmax of an empty input")
    check_finite(z, "logits")
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sgd_step(params, grads, lr):
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape:
        raise ValueError(f"dimension mismatch: params {params.shape} vs grads {grads.shape}")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    return params - lr * grads


def sgd_update_(params, grads, lr):
    """In-place version of :func:`sgd_step` over matching lists of arrays."""
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"dimension mismatch: params {p.shape} vs grads {g.shape}")
        p -= lr * g


class Sgd:
    """SGD over a fixed list of arrays, updated in place, with optional heavy-ball momentum."""

    def __init__(self, params, lr, momentum=0.0):
        if lr < 0 or not 0 <= momentum < 1:
            raise ValueError("need lr >= 0 and 0 <= momentum < 1")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params] if momentum else None

    def step(self, grads):
        if self.lr == 0:
            return
        if self.velocity is None:
            sgd_update_(self.params, grads, self.lr)
            return
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v


@dataclass
class GradCheckReport:
    max_rel_error: float
    num_params: int
    worst_param_index: int

    @property
    def passed(self):
        return self.max_rel_error < 1e-4


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], float],
    params,
    analytic_grads,
    eps: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients against central differences, coordinate by coordinate.

    The relative error per coordinate is ``|a - n| / max(1e-12, |a| + |n|)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params, dtype=np.float64).ravel()
    a = np.asarray(analytic_grads, dtype=np.float64).ravel()
    if a.shape != p.shape:
        raise ValueError("analytic gradient shape does not match params")
    worst, worst_i = 0.0, 0
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        fp = float(loss_fn(p.copy()))
        p[i] = orig - eps
        fm = float(loss_fn(p.copy()))
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError(f"non-finite loss while perturbing coordinate {i}")
        num = (fp - fm) / (2.0 * eps)
        rel = abs(a[i] - num) / max(1e-12, abs(a[i]) + abs(num))
        if rel > worst:
            worst, worst_i = rel, i
    return GradCheckReport(max_rel_error=worst, num_params=p.size, worst_param_index=worst_i)


class ParamPacker:
    """Flattens a list of arrays into one vector and back, for gradient checks."""

    def __init__(self, arrays):
        self.shapes = [np.shape(a) for a in arrays]
        self.sizes = [int(np.prod(s)) for s in self.shapes]

    def pack(self, arrays):
        return np.concatenate([np.asarray(a, dtype=np.float64).ravel() for a in arrays])

    def unpack(self, flat):
        out, pos = [], 0
        for shape, n in zip(self.shapes, self.sizes):
            out.append(np.asarray(flat[pos:pos + n]).reshape(shape))
            pos += n
        return out
