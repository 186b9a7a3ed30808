"""Temporal-holdout comparison of TGTN, its two ablations and the RFM baseline."""

from dataclasses import dataclass, field, replace

import numpy as np

from . import metrics
from .graph import EdgeRule, EncoderConfig, build_graph
from .model import GraphTensors, TgtnConfig, forward
from .train import (DAY, TrainConfig, rfm_features, rotating_views, train,
                    train_logistic_baseline)
from .txgen import FRAUD, LEGIT, negative_sample, temporal_split

VARIANTS = ("TGTN", "TGTN-noPE", "TGTN-noAT", "RFM-logistic")


def variant_config(name, base: TgtnConfig) -> TgtnConfig:
    if name == "TGTN":
        return base
    if name == "TGTN-noPE":
        return replace(base, use_pe=False)
    if name == "TGTN-noAT":
        return replace(base, use_attention=False)
    raise KeyError(name)


def default_boundary(ds, fraction=0.75) -> int:
    ts = [tx.timestamp for tx in ds.transactions]
    return int(min(ts) + fraction * (max(ts) - min(ts)))


@dataclass
class AblationResult:
    boundary_ts: int
    reports: dict
    histories: dict = field(default_factory=dict)
    scores: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def ap(self, name):
        return self.reports[name].ap


def loss_mask_for(node_ids, train_ds, keep_ratio, seed):
    """All fraud nodes plus ``keep_ratio`` sampled legitimate nodes per fraud.

    Sampling thins the loss, not the graph: every training transaction stays
    a node so neighbourhoods look the same as at scoring time.
    """
    keep = {tx.tx_id for tx in negative_sample(train_ds, keep_ratio, seed).transactions}
    return np.array([tid in keep for tid in node_ids])


def scoring_blocks(txs, boundary_ts, span_seconds, block_seconds,
                   edge_rule: EdgeRule = EdgeRule(), enc: EncoderConfig = EncoderConfig()):
    """Score the period from ``boundary_ts`` on in blocks of ``block_seconds``.

    Each block is scored inside a graph that also holds the preceding
    ``span_seconds - block_seconds`` of history, so every scored node sits in
    a window of the same length the model was trained on. Returns the
    joined tensors and the boolean mask of scored nodes.
    """
    txs = list(txs)
    parts, scored = [], []
    if block_seconds <= 0 or span_seconds < block_seconds:
        raise ValueError("need 0 < block_seconds <= span_seconds")
    end = txs[-1].timestamp if txs else boundary_ts
    s = boundary_ts
    while s <= end:
        window = [tx for tx in txs if s - (span_seconds - block_seconds) <= tx.timestamp < s + block_seconds]
        if any(tx.timestamp >= s for tx in window):
            parts.append(GraphTensors.from_graph(build_graph(window, edge_rule, enc)))
            scored.extend(tx.timestamp >= s for tx in window)
        s += block_seconds
    return GraphTensors.concat(parts), np.array(scored, dtype=bool)


def fit_windowed(train_ds, model_config: TgtnConfig = TgtnConfig(),
                 train_config: TrainConfig = TrainConfig(), edge_rule: EdgeRule = EdgeRule(),
                 enc: EncoderConfig = EncoderConfig(), keep_ratio=3.0, span_seconds=14 * DAY,
                 n_views=8):
    """Train one graph model on every transaction of ``train_ds``.

    The graph is :func:`rotating_views` of the data; the loss covers all fraud
    plus ``keep_ratio`` sampled legitimate nodes per fraud. Returns
    (TrainResult, loss mask).
    """
    txs = train_ds.transactions
    views = rotating_views(txs, span_seconds, n_views, edge_rule, enc)
    y = np.array([{FRAUD: 1.0, LEGIT: 0.0}.get(tx.label, np.nan) for tx in txs])
    mask = loss_mask_for([tx.tx_id for tx in txs], train_ds, keep_ratio, train_config.seed)
    return train(views, y, train_config, model_config, train_mask=mask), mask


def score_period(ds, boundary_ts, params, model_config: TgtnConfig,
                 edge_rule: EdgeRule = EdgeRule(), enc: EncoderConfig = EncoderConfig(),
                 span_seconds=14 * DAY, block_seconds=None):
    """Scores of every transaction at or after ``boundary_ts``, in dataset order."""
    if block_seconds is None:
        block_seconds = min(edge_rule.max_gap_seconds, span_seconds)
    gt, scored = scoring_blocks(ds.transactions, boundary_ts, span_seconds, block_seconds,
                                edge_rule, enc)
    if gt.n == 0:
        return np.zeros(0)
    return forward(gt, params, model_config, training=False)[scored]


def run_ablation(ds, boundary_ts=None, edge_rule: EdgeRule = EdgeRule(),
                 enc: EncoderConfig = EncoderConfig(), model_config: TgtnConfig = TgtnConfig(),
                 train_config: TrainConfig = TrainConfig(), keep_ratio=3.0,
                 variants=VARIANTS, threshold=0.5, span_seconds=14 * DAY, n_views=8,
                 block_seconds=None) -> AblationResult:
    """Train every variant on the period before ``boundary_ts``, score the period after.

    Graph variants train with :func:`fit_windowed` and score with
    :func:`score_period`, so every node is seen inside a window of
    ``span_seconds``. The RFM baseline sees the full history, which only
    ever helps it.
    """
    if boundary_ts is None:
        boundary_ts = default_boundary(ds)
    train_ds, test_ds = temporal_split(ds, boundary_ts)
    if not test_ds.transactions:
        raise ValueError("temporal split left no test transactions")
    y_test = np.array([1.0 if tx.label == FRAUD else 0.0 for tx in test_ds.transactions])
    ts_test = np.array([tx.timestamp for tx in test_ds.transactions])

    result = AblationResult(boundary_ts=boundary_ts, reports={})
    mask = loss_mask_for([tx.tx_id for tx in train_ds.transactions], train_ds, keep_ratio,
                         train_config.seed)
    for name in variants:
        if name == "RFM-logistic":
            feats = rfm_features(ds.transactions)
            in_train = np.array([tx.timestamp < boundary_ts for tx in ds.transactions])
            train_ids = {tx.tx_id for tx, m in zip(train_ds.transactions, mask) if m}
            sel = np.array([tx.tx_id in train_ids for tx in ds.transactions])
            y_all = np.array([1.0 if tx.label == FRAUD else 0.0 for tx in ds.transactions])
            model = train_logistic_baseline(feats[sel], y_all[sel], seed=train_config.seed)
            scores = model.predict_proba(feats[~in_train])
            result.params[name] = model
        else:
            cfg = variant_config(name, model_config)
            fit, _ = fit_windowed(train_ds, cfg, train_config, edge_rule, enc, keep_ratio,
                                  span_seconds, n_views)
            scores = score_period(ds, boundary_ts, fit.params, cfg, edge_rule, enc,
                                  span_seconds, block_seconds)
            result.histories[name] = fit.history
            result.params[name] = fit.params
        result.scores[name] = scores
        result.reports[name] = metrics.monthly_report(scores, y_test, ts_test, threshold)
    return result
