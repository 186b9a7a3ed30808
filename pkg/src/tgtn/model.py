"""Graph self-attention Transformer over the transaction graph.

Each encoder layer lets a node attend to itself and its 1-hop graph
neighbours only (multi-head scaled dot-product attention), then applies
residual + layer norm, a ReLU feed-forward block, and residual + layer norm
again. Initial states are a linear embedding of the raw node features plus
a sinusoidal encoding of the node's timestamp rank. A logistic head turns
the final states into fraud probabilities.

Attention runs on an edge list (self loops included) grouped by receiving
node, so the cost is linear in the number of edges. The backward pass is
written out by hand and checked against finite differences in the tests.
"""

import json
import math
import struct
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp

from .graph import TxGraph
from .numerics import (BCE_EPS, ParamStore, ShapeError, layer_norm_backward,
                       layer_norm_forward, segment_softmax, weighted_bce, weighted_bce_grad)

CHECKPOINT_FORMAT = "tgtn-checkpoint/1"


class NonFiniteError(FloatingPointError):
    pass


@dataclass(frozen=True)
class TgtnConfig:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 64
    use_pe: bool = True
    use_attention: bool = True
    dropout_rate: float = 0.1
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# --- graph tensors ----------------------------------------------------------

def timestamp_ranks(timestamps, tx_ids) -> np.ndarray:
    order = np.lexsort((np.asarray(tx_ids), np.asarray(timestamps)))
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(len(order))
    return ranks


def sinusoid(positions, d_model) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    k2 = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, k2 / d_model)
    pe = np.zeros((len(pos), d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def positional_encoding(g: TxGraph, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of each node's rank in (timestamp, tx_id) order."""
    return sinusoid(timestamp_ranks(g.timestamps, g.node_ids), d_model)


class GraphTensors:
    """Arrays the model consumes: features, rank positions and the attention edge list.

    Edges (dst <- src) include one self loop per node and are grouped by dst,
    so segment ``i`` of the edge list is node i's attention neighbourhood.
    """

    def __init__(self, X, neighbor_lists, ranks, timestamps=None):
        self.X = np.asarray(X, dtype=np.float64)
        self.n = self.X.shape[0]
        self.ranks = np.asarray(ranks, dtype=np.int64)
        self.timestamps = self.ranks if timestamps is None else np.asarray(timestamps)
        src, dst = [], []
        for i, nbrs in enumerate(neighbor_lists):
            src.append(i)
            src.extend(nbrs)
            dst.extend([i] * (len(nbrs) + 1))
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        counts = np.array([len(nb) + 1 for nb in neighbor_lists], dtype=np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.starts = self.indptr[:-1]
        self.counts = counts
        self._pe = {}

    @classmethod
    def from_graph(cls, g: TxGraph) -> "GraphTensors":
        ts = g.timestamps
        return cls(g.X, [g.neighbors(i) for i in range(len(g))],
                   timestamp_ranks(ts, g.node_ids), ts)

    @classmethod
    def concat(cls, parts) -> "GraphTensors":
        """Disjoint union; each part keeps its own ranks, so positions restart per part."""
        X = np.vstack([p.X for p in parts]) if parts else np.zeros((0, 0))
        neighbor_lists, ranks, ts = [], [], []
        offset = 0
        for p in parts:
            for i in range(p.n):
                nbrs = p.src[p.indptr[i] + 1:p.indptr[i + 1]]
                neighbor_lists.append((nbrs + offset).tolist())
            ranks.append(p.ranks)
            ts.append(p.timestamps)
            offset += p.n
        return cls(X, neighbor_lists, np.concatenate(ranks) if parts else [],
                   np.concatenate(ts) if parts else None)

    @property
    def n_edges(self) -> int:
        return len(self.src)

    def pe(self, d_model) -> np.ndarray:
        if d_model not in self._pe:
            self._pe[d_model] = sinusoid(self.ranks, d_model)
        return self._pe[d_model]

    def sparse(self, values) -> sp.csr_matrix:
        return sp.csr_matrix((values, self.src, self.indptr), shape=(self.n, self.n))


def as_tensors(g) -> GraphTensors:
    return g if isinstance(g, GraphTensors) else GraphTensors.from_graph(g)


# --- parameters -------------------------------------------------------------

def param_shapes(config: TgtnConfig, d_in: int) -> list:
    d, dh, dff = config.d_model, config.d_head, config.d_ff
    shapes = [("W_in", (d_in, d)), ("b_in", (d,))]
    for l in range(config.n_layers):
        for h in range(config.n_heads):
            for w in ("W_Q", "W_K", "W_V"):
                shapes.append((f"l{l}.h{h}.{w}", (d, dh)))
        shapes += [(f"l{l}.W_O", (d, d)),
                   (f"l{l}.ln1.gamma", (d,)), (f"l{l}.ln1.beta", (d,)),
                   (f"l{l}.W_1", (d, dff)), (f"l{l}.b_1", (dff,)),
                   (f"l{l}.W_2", (dff, d)), (f"l{l}.b_2", (d,)),
                   (f"l{l}.ln2.gamma", (d,)), (f"l{l}.ln2.beta", (d,))]
    shapes += [("W_h", (d, 1)), ("b_h", (1,))]
    return shapes


def glorot_bound(shape) -> float:
    return math.sqrt(6.0 / (shape[0] + shape[1]))


def init_params(config: TgtnConfig, d_in: int, seed: int = 0) -> ParamStore:
    """Glorot-uniform matrices, zero biases and betas, unit gammas."""
    rng = np.random.Generator(np.random.PCG64(seed))
    store = ParamStore()
    for name, shape in param_shapes(config, d_in):
        if len(shape) == 2:
            a = glorot_bound(shape)
            store.add(name, rng.uniform(-a, a, size=shape))
        elif name.endswith("gamma"):
            store.add(name, np.ones(shape))
        else:
            store.add(name, np.zeros(shape))
    return store


def check_shapes(params: ParamStore, config: TgtnConfig, d_in: int):
    for name, shape in param_shapes(config, d_in):
        if name not in params:
            raise ShapeError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise ShapeError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


# --- forward / backward -----------------------------------------------------

def _heads(params, l, config, w):
    return np.concatenate([params[f"l{l}.h{h}.{w}"] for h in range(config.n_heads)], axis=1)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_finite(arr, where):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {where}")


def _dropout_mask(rng, shape, rate):
    if rng is None or rate == 0.0:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)


def gat_layer_forward(H, gt: GraphTensors, params, l: int, config: TgtnConfig, rng=None):
    """One encoder layer. Returns (new states, cache for the backward pass)."""
    n, nh, dh = gt.n, config.n_heads, config.d_head
    src, dst = gt.src, gt.dst
    V = (H @ _heads(params, l, config, "W_V")).reshape(n, nh, dh)
    if config.use_attention:
        Q = (H @ _heads(params, l, config, "W_Q")).reshape(n, nh, dh)
        K = (H @ _heads(params, l, config, "W_K")).reshape(n, nh, dh)
        S = np.einsum("ehd,ehd->eh", Q[dst], K[src]) / math.sqrt(dh)
        for h in range(nh):
            _check_finite(S[:, h], f"layer {l} head {h} attention scores")
        P = segment_softmax(S, gt.starts)
    else:
        Q = K = None
        P = np.repeat(1.0 / gt.counts, gt.counts)[:, None].repeat(nh, axis=1)
    att_mask = _dropout_mask(rng, P.shape, config.dropout_rate)
    Pd = P if att_mask is None else P * att_mask
    A = np.empty((n, nh, dh))
    for h in range(nh):
        A[:, h, :] = gt.sparse(Pd[:, h]) @ V[:, h, :]
        _check_finite(A[:, h, :], f"layer {l} head {h} output")
    A = A.reshape(n, nh * dh)
    R1 = H + A @ params[f"l{l}.W_O"]
    H1, ln1 = layer_norm_forward(R1, params[f"l{l}.ln1.gamma"], params[f"l{l}.ln1.beta"],
                                 config.ln_eps)
    F = H1 @ params[f"l{l}.W_1"] + params[f"l{l}.b_1"]
    Z = np.maximum(F, 0.0)
    ff_mask = _dropout_mask(rng, Z.shape, config.dropout_rate)
    Zd = Z if ff_mask is None else Z * ff_mask
    R2 = H1 + Zd @ params[f"l{l}.W_2"] + params[f"l{l}.b_2"]
    H2, ln2 = layer_norm_forward(R2, params[f"l{l}.ln2.gamma"], params[f"l{l}.ln2.beta"],
                                 config.ln_eps)
    _check_finite(H2, f"layer {l} output")
    cache = dict(H=H, Q=Q, K=K, V=V, P=P, Pd=Pd, att_mask=att_mask, A=A, H1=H1, ln1=ln1,
                 F=F, Zd=Zd, ff_mask=ff_mask, ln2=ln2)
    return H2, cache


def gat_layer_backward(dH2, gt: GraphTensors, params, l: int, config: TgtnConfig, cache, grads):
    n, nh, dh = gt.n, config.n_heads, config.d_head
    src, dst = gt.src, gt.dst
    dR2, grads[f"l{l}.ln2.gamma"], grads[f"l{l}.ln2.beta"] = layer_norm_backward(
        dH2, params[f"l{l}.ln2.gamma"], cache["ln2"])
    grads[f"l{l}.W_2"] = cache["Zd"].T @ dR2
    grads[f"l{l}.b_2"] = dR2.sum(axis=0)
    dZ = dR2 @ params[f"l{l}.W_2"].T
    if cache["ff_mask"] is not None:
        dZ = dZ * cache["ff_mask"]
    dF = dZ * (cache["F"] > 0)
    grads[f"l{l}.W_1"] = cache["H1"].T @ dF
    grads[f"l{l}.b_1"] = dF.sum(axis=0)
    dH1 = dR2 + dF @ params[f"l{l}.W_1"].T
    dR1, grads[f"l{l}.ln1.gamma"], grads[f"l{l}.ln1.beta"] = layer_norm_backward(
        dH1, params[f"l{l}.ln1.gamma"], cache["ln1"])
    grads[f"l{l}.W_O"] = cache["A"].T @ dR1
    dA = (dR1 @ params[f"l{l}.W_O"].T).reshape(n, nh, dh)

    H, V, Pd = cache["H"], cache["V"], cache["Pd"]
    dV = np.empty_like(V)
    for h in range(nh):
        dV[:, h, :] = gt.sparse(Pd[:, h]).T @ dA[:, h, :]
    dH = dR1
    for h in range(nh):
        grads[f"l{l}.h{h}.W_V"] = H.T @ dV[:, h, :]
    dH = dH + dV.reshape(n, nh * dh) @ _heads(params, l, config, "W_V").T

    if config.use_attention:
        Q, K, P = cache["Q"], cache["K"], cache["P"]
        dP = np.einsum("ehd,ehd->eh", dA[dst], V[src])
        if cache["att_mask"] is not None:
            dP = dP * cache["att_mask"]
        inner = np.add.reduceat(P * dP, gt.starts, axis=0)
        dS = P * (dP - np.repeat(inner, gt.counts, axis=0)) / math.sqrt(dh)
        dQ = np.empty_like(Q)
        dK = np.empty_like(K)
        for h in range(nh):
            m = gt.sparse(dS[:, h])
            dQ[:, h, :] = m @ K[:, h, :]
            dK[:, h, :] = m.T @ Q[:, h, :]
            grads[f"l{l}.h{h}.W_Q"] = H.T @ dQ[:, h, :]
            grads[f"l{l}.h{h}.W_K"] = H.T @ dK[:, h, :]
        dH = dH + dQ.reshape(n, nh * dh) @ _heads(params, l, config, "W_Q").T
        dH = dH + dK.reshape(n, nh * dh) @ _heads(params, l, config, "W_K").T
    else:
        for h in range(nh):
            grads[f"l{l}.h{h}.W_Q"] = np.zeros((config.d_model, dh))
            grads[f"l{l}.h{h}.W_K"] = np.zeros((config.d_model, dh))
    return dH


def _forward(gt: GraphTensors, params, config: TgtnConfig, training, rng_seed):
    if gt.X.shape[1] != params["W_in"].shape[0]:
        raise ShapeError(f"graph features have width {gt.X.shape[1]}, "
                         f"model expects d_in = {params['W_in'].shape[0]}")
    if params["W_in"].shape[1] != config.d_model:
        raise ShapeError("parameters do not match config.d_model")
    rng = (np.random.Generator(np.random.PCG64(rng_seed))
           if training and config.dropout_rate > 0 else None)
    H = gt.X @ params["W_in"] + params["b_in"]
    if config.use_pe:
        H = H + gt.pe(config.d_model)
    caches = []
    for l in range(config.n_layers):
        H, cache = gat_layer_forward(H, gt, params, l, config, rng)
        caches.append(cache)
    z = (H @ params["W_h"])[:, 0] + params["b_h"][0]
    return _sigmoid(z), H, caches


def forward(g, params: ParamStore, config: TgtnConfig, training: bool = False,
            rng_seed: int = 0) -> np.ndarray:
    """Fraud probability per node."""
    gt = as_tensors(g)
    if gt.n == 0:
        return np.zeros(0)
    p, _, _ = _forward(gt, params, config, training, rng_seed)
    return p


def masked_loss(p, labels, node_mask, pos_weight):
    idx = np.flatnonzero(node_mask)
    return weighted_bce(p[idx], np.asarray(labels, dtype=np.float64)[idx], pos_weight)


def backward(g, params: ParamStore, config: TgtnConfig, labels, node_mask,
             pos_weight: float = 1.0, rng_seed: int = 0, training: bool = True):
    """Masked weighted BCE and its gradient for every parameter.

    Dropout masks are regenerated from ``rng_seed`` exactly as in
    :func:`forward` with the same seed.
    """
    gt = as_tensors(g)
    node_mask = np.asarray(node_mask, dtype=bool)
    idx = np.flatnonzero(node_mask)
    if idx.size == 0:
        raise ValueError("node_mask selects no nodes")
    y = np.asarray(labels, dtype=np.float64)
    p, H, caches = _forward(gt, params, config, training, rng_seed)
    loss = weighted_bce(p[idx], y[idx], pos_weight)

    dp = np.zeros(gt.n)
    dp[idx] = weighted_bce_grad(p[idx], y[idx], pos_weight)
    dz = dp * p * (1.0 - p)
    grads = {"W_h": H.T @ dz[:, None], "b_h": np.array([dz.sum()])}
    dH = dz[:, None] @ params["W_h"].T
    for l in reversed(range(config.n_layers)):
        dH = gat_layer_backward(dH, gt, params, l, config, caches[l], grads)
    grads["W_in"] = gt.X.T @ dH
    grads["b_in"] = dH.sum(axis=0)
    return loss, grads


# --- checkpoints ------------------------------------------------------------

def _hex(x: float) -> str:
    return struct.pack(">d", x).hex()


def _unhex(s: str) -> float:
    return struct.unpack(">d", bytes.fromhex(s))[0]


def checkpoint_dict(params: ParamStore, config: TgtnConfig, d_in: int, provenance=None) -> dict:
    tensors = []
    for name, value in params.items():
        flat = value.reshape(-1).tolist()
        tensors.append({"name": name, "shape": list(value.shape),
                        "values": flat, "hex": [_hex(x) for x in flat]})
    return {"format": CHECKPOINT_FORMAT, "config": asdict(config), "d_in": d_in,
            "provenance": provenance or {}, "params": tensors}


def save_checkpoint(path, params, config, d_in, provenance=None):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(checkpoint_dict(params, config, d_in, provenance), fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (params, config, d_in, provenance); values are restored from their bit patterns."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} document")
    config = TgtnConfig.from_dict(doc["config"])
    store = ParamStore()
    for t in doc["params"]:
        values = np.array([_unhex(s) for s in t["hex"]], dtype=np.float64)
        store.add(t["name"], values.reshape(t["shape"]))
    check_shapes(store, config, doc["d_in"])
    return store, config, doc["d_in"], doc.get("provenance", {})


__all__ = ["TgtnConfig", "GraphTensors", "positional_encoding", "init_params",
           "gat_layer_forward", "forward", "backward", "masked_loss", "save_checkpoint",
           "load_checkpoint", "BCE_EPS"]
