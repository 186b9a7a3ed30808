"""Dense float64 building blocks, the Adam optimizer and a finite-difference oracle."""

from collections import OrderedDict

import numpy as np

BCE_EPS = 1e-7


class ShapeError(ValueError):
    pass


def matmul(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def masked_softmax_rows(s, mask) -> np.ndarray:
    """Row softmax over entries where ``mask`` is true; masked entries are exactly 0."""
    s = np.asarray(s, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if s.shape != mask.shape:
        raise ShapeError(f"scores {s.shape} and mask {mask.shape} differ")
    if s.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {s.shape}")
    empty = ~mask.any(axis=1)
    if empty.any():
        raise ValueError(f"fully masked row(s): {np.flatnonzero(empty).tolist()}")
    row_max = np.where(mask, s, -np.inf).max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, s - row_max, 0.0)), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def segment_softmax(scores, starts) -> np.ndarray:
    """Softmax of ``scores`` (E, ...) within contiguous segments beginning at ``starts``.

    Sparse counterpart of :func:`masked_softmax_rows`: the unmasked entries of
    each row laid end to end. Every segment must be non-empty.
    """
    m = np.maximum.reduceat(scores, starts, axis=0)
    counts = np.diff(np.append(starts, len(scores)))
    e = np.exp(scores - np.repeat(m, counts, axis=0))
    z = np.add.reduceat(e, starts, axis=0)
    return e / np.repeat(z, counts, axis=0)


def layer_norm(x, gamma, beta, eps=1e-5) -> np.ndarray:
    """Normalise the last axis with the population variance, then scale and shift."""
    x = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    if not (x.shape[-1] == gamma.shape[-1] == beta.shape[-1]):
        raise ShapeError(f"layer_norm length mismatch: x {x.shape}, gamma {gamma.shape}, "
                         f"beta {beta.shape}")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def layer_norm_forward(x, gamma, beta, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    return xhat * gamma + beta, (xhat, inv)


def layer_norm_backward(dy, gamma, cache):
    xhat, inv = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def weighted_bce(p, y, pos_weight=1.0) -> float:
    """mean_i -[w y_i ln p_i + (1 - y_i) ln(1 - p_i)] with p clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeError(f"weighted_bce length mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(np.mean(-(pos_weight * y * np.log(pc) + (1.0 - y) * np.log1p(-pc))))


def weighted_bce_grad(p, y, pos_weight=1.0) -> np.ndarray:
    """d loss / d p, zero where the clamp is active."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    inside = (p > BCE_EPS) & (p < 1.0 - BCE_EPS)
    pc = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    g = -(pos_weight * y / pc - (1.0 - y) / (1.0 - pc)) / len(p)
    return np.where(inside, g, 0.0)


class ParamStore:
    """Named float64 tensors with matching gradient and Adam moment slots."""

    def __init__(self):
        self.params = OrderedDict()
        self.grads = OrderedDict()
        self.m = OrderedDict()
        self.v = OrderedDict()

    def add(self, name, value):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        value = np.array(value, dtype=np.float64)
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def items(self):
        return self.params.items()

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def set_grads(self, grads: dict):
        for name, g in grads.items():
            if g.shape != self.params[name].shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, "
                                 f"parameter has {self.params[name].shape}")
            self.grads[name][...] = g

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for name in self.params:
            out.params[name] = self.params[name].copy()
            out.grads[name] = self.grads[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        return out

    def size(self) -> int:
        return sum(p.size for p in self.params.values())


def adam_step(store: ParamStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=1):
    if t < 1:
        raise ValueError("Adam step index t starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, p in store.params.items():
        g = store.grads[name]
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        g.fill(0.0)
    return store


def finite_diff_gradient(f, store: ParamStore, h=1e-5, names=None) -> dict:
    """Central differences of scalar ``f(store)`` for every coordinate of every parameter."""
    out = {}
    for name in names or store.names():
        p = store.params[name]
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            fp = f(store)
            flat[k] = orig - h
            fm = f(store)
            flat[k] = orig
            gflat[k] = (fp - fm) / (2.0 * h)
        out[name] = g
    return out
