"""Full-graph training with early stopping, transductive k-fold CV, and the
RFM logistic-regression baseline."""

import bisect
import csv
import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import metrics
from .graph import EdgeRule, EncoderConfig, build_graph
from .model import GraphTensors, TgtnConfig, backward, forward, init_params
from .numerics import adam_step

log = logging.getLogger(__name__)

DAY = 86_400


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pos_weight: float = None  # None: legit/fraud ratio of the training mask
    batch_mode: str = "full-graph"
    patience: int = 20
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.batch_mode != "full-graph":
            raise ValueError("only full-graph batches are supported")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class TrainResult:
    params: object
    history: list
    best_epoch: int
    pos_weight: float


def validation_split(labels, candidates, fraction, timestamps=None):
    """Per class, hold out the most recent ``fraction`` of the candidate nodes.

    The holdout is temporal because neighbouring transactions of one ring
    share cards and merchants: a random holdout rewards memorising those
    identities instead of patterns that carry over to later months. Ties in
    time fall back to node order. A class with fewer than two candidates is
    not split; if either class ends up with no validation node the whole
    candidate set doubles as the validation set, so tiny toy graphs still
    get an AP signal.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    ts = np.zeros(len(labels)) if timestamps is None else np.asarray(timestamps)
    val = []
    for cls in (1.0, 0.0):
        members = candidates[labels[candidates] == cls]
        members = members[np.argsort(ts[members], kind="stable")]
        if len(members) >= 2:
            k = min(len(members) - 1, max(1, int(round(fraction * len(members)))))
            val.extend(members[-k:].tolist())
    val = np.array(sorted(val), dtype=np.int64)
    if len(val) == 0 or len(set(labels[val].tolist())) < 2:
        return np.asarray(candidates), np.asarray(candidates)
    train = np.setdiff1d(candidates, val)
    return train, val


def _views(g):
    if isinstance(g, (list, tuple)):
        views = [v if isinstance(v, GraphTensors) else GraphTensors.from_graph(v) for v in g]
        if not views:
            raise ValueError("no graph views given")
        if any(v.n != views[0].n for v in views):
            raise ValueError("graph views must share one node set")
        return views
    return [g if isinstance(g, GraphTensors) else GraphTensors.from_graph(g)]


def train(g, labels, config: TrainConfig = TrainConfig(),
          model_config: TgtnConfig = TgtnConfig(), train_mask=None) -> TrainResult:
    """Adam on the masked weighted BCE of the whole graph.

    ``train_mask`` selects the labelled nodes available for training (all
    labelled nodes by default); the most recent slice of them is held out to
    drive early stopping, and the parameters of the best validation-AP epoch
    are returned.

    ``g`` may also be a list of views of one node set (same node order, e.g.
    from :func:`rotating_views`): epoch e steps on view (e - 1) mod len, and
    validation always scores view 0.
    """
    views = _views(g)
    gt = views[0]
    y = np.asarray(labels, dtype=np.float64)
    labelled = ~np.isnan(y)
    mask = labelled if train_mask is None else (np.asarray(train_mask, dtype=bool) & labelled)
    candidates = np.flatnonzero(mask)
    n_fraud = int((y[candidates] == 1).sum())
    n_legit = len(candidates) - n_fraud
    if n_fraud == 0 or n_legit == 0:
        raise ValueError(f"training mask needs both classes (fraud={n_fraud}, legit={n_legit})")
    tr_idx, val_idx = validation_split(y, candidates, config.val_fraction, gt.timestamps)
    tr_mask = np.zeros(gt.n, dtype=bool)
    tr_mask[tr_idx] = True
    pos_weight = config.pos_weight
    if pos_weight is None:
        n_pos = int((y[tr_idx] == 1).sum())
        pos_weight = (len(tr_idx) - n_pos) / n_pos

    params = init_params(model_config, gt.X.shape[1], seed=config.seed)
    y_filled = np.nan_to_num(y, nan=0.0)
    history = []
    best = (-math.inf, 0, params.copy())
    for epoch in range(1, config.epochs + 1):
        loss, grads = backward(views[(epoch - 1) % len(views)], params, model_config, y_filled, tr_mask, pos_weight,
                               rng_seed=config.seed * 1_000_003 + epoch)
        params.set_grads(grads)
        adam_step(params, config.lr, config.beta1, config.beta2, config.eps, t=epoch)
        p = forward(gt, params, model_config, training=False)
        val_ap = metrics.average_precision(p[val_idx], y[val_idx])
        val_auc = metrics.roc_auc(p[val_idx], y[val_idx])
        history.append({"epoch": epoch, "loss": loss, "val_ap": val_ap, "val_auc": val_auc})
        if val_ap > best[0]:
            best = (val_ap, epoch, params.copy())
        elif epoch - best[1] > config.patience:
            break
    return TrainResult(params=best[2], history=history, best_epoch=best[1], pos_weight=pos_weight)


def history_csv(history) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "loss", "val_ap", "val_auc"])
    for row in history:
        writer.writerow([row["epoch"], repr(row["loss"]), repr(row["val_ap"]), repr(row["val_auc"])])
    return buf.getvalue()


# --- windowed graphs --------------------------------------------------------

def tiled_tensors(txs, span_seconds, offset=0, edge_rule: EdgeRule = EdgeRule(),
                  enc: EncoderConfig = EncoderConfig()) -> GraphTensors:
    """Cut time-sorted ``txs`` into consecutive windows of ``span_seconds`` and
    join the window graphs as one disjoint union.

    Windows start at ``first_ts - offset``. Node order is the input order, and
    each window ranks its own nodes from 0, as a sliding window does at
    scoring time.
    """
    txs = list(txs)
    if span_seconds <= 0:
        raise ValueError("span_seconds must be > 0")
    parts = []
    i = 0
    if txs:
        start = txs[0].timestamp - offset
        while i < len(txs):
            j = i
            while j < len(txs) and txs[j].timestamp < start + span_seconds:
                j += 1
            if j > i:
                parts.append(GraphTensors.from_graph(build_graph(txs[i:j], edge_rule, enc)))
            i = j
            start += span_seconds
    return GraphTensors.concat(parts)


def rotating_views(txs, span_seconds, n_views, edge_rule: EdgeRule = EdgeRule(),
                   enc: EncoderConfig = EncoderConfig()) -> list:
    """``n_views`` tilings of ``txs`` whose window borders are shifted by
    span / n_views each.

    In one big graph the timestamp rank of a node is unique, so its
    positional encoding works as a node id the model can memorise. Cycling
    through shifted tilings keeps the relative order of nearby transactions
    while moving every node's absolute position from one epoch to the next.
    """
    if n_views < 1:
        raise ValueError("n_views must be >= 1")
    return [tiled_tensors(txs, span_seconds, k * span_seconds // n_views, edge_rule, enc)
            for k in range(n_views)]


# --- cross-validation -------------------------------------------------------

@dataclass
class CVReport:
    k: int
    folds: list  # node indices per fold
    entries: list = field(default_factory=list)  # per grid entry: configs + fold scores
    selected: int = 0

    @property
    def selected_config(self):
        return self.entries[self.selected]["model_config"], self.entries[self.selected]["train_config"]

    def to_dict(self):
        return {"k": self.k, "fold_sizes": [len(f) for f in self.folds],
                "entries": self.entries, "selected": self.selected}


def stratified_time_folds(labels, timestamps, k):
    """Per class, nodes in time order cut into k contiguous runs; fold f takes run f of each."""
    y = np.asarray(labels, dtype=np.float64)
    ts = np.asarray(timestamps)
    labelled = np.flatnonzero(~np.isnan(y))
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(labelled):
        raise ValueError(f"k = {k} exceeds the number of labelled nodes ({len(labelled)})")
    folds = [[] for _ in range(k)]
    for cls in (1.0, 0.0):
        members = labelled[y[labelled] == cls]
        members = members[np.argsort(ts[members], kind="stable")]
        for f, chunk in enumerate(np.array_split(members, k)):
            folds[f].extend(chunk.tolist())
    return [np.array(sorted(f), dtype=np.int64) for f in folds]


def kfold_cv(ds, k, grid, edge_rule: EdgeRule = EdgeRule(),
             enc: EncoderConfig = EncoderConfig()) -> CVReport:
    """Transductive CV: one graph over ``ds``; folds only change which nodes
    contribute to the loss and which are scored."""
    if not grid:
        raise ValueError("grid is empty")
    g = build_graph(ds.transactions, edge_rule, enc)
    gt = GraphTensors.from_graph(g)
    y = g.y
    if not ((y == 1).any() and (y == 0).any()):
        raise ValueError("cross-validation needs both classes")
    folds = stratified_time_folds(y, g.timestamps, k)
    for f, fold in enumerate(folds):
        if len(set(y[fold].tolist())) < 2:
            raise ValueError(f"fold {f} lacks a class; lower k (k={k}, "
                             f"fraud={int((y == 1).sum())})")
    report = CVReport(k=k, folds=folds)
    for model_config, train_config in grid:
        aps, aucs = [], []
        for fold in folds:
            mask = ~np.isnan(y)
            mask[fold] = False
            result = train(gt, y, train_config, model_config, train_mask=mask)
            p = forward(gt, result.params, model_config, training=False)
            aps.append(metrics.average_precision(p[fold], y[fold]))
            aucs.append(metrics.roc_auc(p[fold], y[fold]))
        report.entries.append({
            "model_config": asdict(model_config), "train_config": asdict(train_config),
            "fold_ap": aps, "fold_auc": aucs,
            "mean_ap": float(np.mean(aps)), "std_ap": float(np.std(aps)),
            "mean_auc": float(np.mean(aucs)), "std_auc": float(np.std(aucs))})
    report.selected = int(np.argmax([e["mean_ap"] for e in report.entries]))
    return report


# --- RFM baseline -----------------------------------------------------------

RFM_NAMES = ("card_recency", "card_frequency", "card_monetary",
             "merchant_recency", "merchant_frequency", "merchant_monetary")


def rfm_features(txs, as_of_ts=None, windows=(DAY, 7 * DAY)) -> np.ndarray:
    """Recency / frequency / monetary per card and per merchant for each window.

    For a transaction at time t and window w only history with timestamp in
    [t - w, t) counts (and, when ``as_of_ts`` is given, timestamp < as_of_ts).
    Recency is the gap to the entity's previous transaction capped at w.
    Columns: for each window, the six ``RFM_NAMES`` in order.
    """
    txs = list(txs)
    history = {}
    for tx in txs:
        if as_of_ts is not None and tx.timestamp >= as_of_ts:
            continue
        for key in (("c", tx.card_id), ("m", tx.merchant_id)):
            history.setdefault(key, []).append((tx.timestamp, float(tx.amount)))
    index = {}
    for key, events in history.items():
        events.sort(key=lambda e: e[0])
        times = [e[0] for e in events]
        cum = np.concatenate([[0.0], np.cumsum([e[1] for e in events])])
        index[key] = (times, cum)

    out = np.zeros((len(txs), 6 * len(windows)))
    for row, tx in enumerate(txs):
        t = tx.timestamp
        col = 0
        for w in windows:
            for key in (("c", tx.card_id), ("m", tx.merchant_id)):
                times, cum = index.get(key, ([], np.zeros(1)))
                hi = bisect.bisect_left(times, t)
                lo = bisect.bisect_left(times, t - w)
                recency = min(t - times[hi - 1], w) if hi > 0 else w
                out[row, col:col + 3] = (recency, hi - lo, cum[hi] - cum[lo])
                col += 3
    return out


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    def standardize(self, features):
        z = np.zeros_like(np.asarray(features, dtype=np.float64))
        ok = self.std > 0
        z[:, ok] = (features[:, ok] - self.mean[ok]) / self.std[ok]
        return z

    def predict_proba(self, features) -> np.ndarray:
        logits = self.standardize(features) @ self.weights + self.bias
        return 1.0 / (1.0 + np.exp(-logits))


def logistic_loss_and_grad(weights, bias, Z, y):
    """Mean BCE of a logistic model on standardized features, with its gradient."""
    logits = Z @ weights + bias
    # log(1 + e^x) computed stably
    loss = np.mean(np.logaddexp(0.0, logits) - y * logits)
    r = (1.0 / (1.0 + np.exp(-logits)) - y) / len(y)
    return float(loss), Z.T @ r, float(r.sum())


def train_logistic_baseline(features, labels, lr=0.5, epochs=500, seed=0) -> LogisticModel:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if not ((y == 1).any() and (y == 0).any()):
        raise ValueError("logistic baseline needs both classes")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    if (std == 0).any():
        warnings.warn(f"zero-variance feature columns {np.flatnonzero(std == 0).tolist()} "
                      "standardized to 0", stacklevel=2)
    model = LogisticModel(np.zeros(X.shape[1]), 0.0, mean, std)
    rng = np.random.Generator(np.random.PCG64(seed))
    model.weights = rng.normal(scale=0.01, size=X.shape[1]) * (std > 0)
    Z = model.standardize(X)
    for _ in range(epochs):
        _, gw, gb = logistic_loss_and_grad(model.weights, model.bias, Z, y)
        model.weights = model.weights - lr * gw
        model.bias -= lr * gb
    return model
