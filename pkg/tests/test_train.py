import math
import warnings
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_txs, tx_rows
from tgtn.graph import EdgeRule, build_graph
from tgtn.model import GraphTensors, TgtnConfig, forward
from tgtn.train import (DAY, LogisticModel, TrainConfig, history_csv, kfold_cv, logistic_loss_and_grad,
                        rfm_features, rotating_views, stratified_time_folds, tiled_tensors, train,
                        train_logistic_baseline, validation_split)
from tgtn.txgen import Dataset, GenConfig, generate
from tgtn import metrics

SMALL_MODEL = TgtnConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16, dropout_rate=0.0)


@pytest.fixture(scope="module")
def toy():
    ds = generate(GenConfig(seed=1, n_cards=30, n_merchants=20, n_rings=6, n_crowds=3,
                            end_ts=1_675_209_600 + 20 * DAY))
    g = build_graph(ds.transactions)
    return ds, g


def test_config_invariants():
    for bad in ({"epochs": 0}, {"lr": 0}, {"patience": -1}, {"batch_mode": "mini"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_validation_split_is_recent_and_stratified():
    y = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0], float)
    ts = np.arange(12)
    tr, val = validation_split(y, np.arange(12), 0.25, ts)
    assert set(val) == {3, 10, 11}
    assert set(tr) | set(val) == set(range(12)) and not set(tr) & set(val)


def test_validation_split_tiny_fallback():
    y = np.array([1.0, 0.0])
    tr, val = validation_split(y, np.arange(2), 0.1)
    assert list(tr) == list(val) == [0, 1]


def test_train_toy(toy):
    ds, g = toy
    cfg = TrainConfig(epochs=30, lr=5e-3, patience=30, seed=2)
    res = train(g, g.y, cfg, SMALL_MODEL)
    losses = [h["loss"] for h in res.history]
    assert losses[-1] <= losses[0]
    aps = [h["val_ap"] for h in res.history]
    assert res.best_epoch == int(np.argmax(aps)) + 1
    again = train(g, g.y, cfg, SMALL_MODEL)
    assert again.history == res.history
    assert all(np.array_equal(res.params[k], again.params[k]) for k in res.params)
    assert res.pos_weight > 1


def test_train_returns_best_not_last(toy):
    ds, g = toy
    res = train(g, g.y, TrainConfig(epochs=25, lr=2e-2, patience=100), SMALL_MODEL)
    best = res.history[res.best_epoch - 1]
    y = g.y
    tr, val = validation_split(y, np.flatnonzero(~np.isnan(y)), 0.1, g.timestamps)
    p = forward(g, res.params, SMALL_MODEL)
    assert metrics.average_precision(p[val], y[val]) == best["val_ap"]


def test_early_stopping_patience(toy):
    _, g = toy
    res = train(g, g.y, TrainConfig(epochs=200, lr=1e-1, patience=2), SMALL_MODEL)
    assert len(res.history) <= res.best_epoch + 3


def test_single_class_mask_rejected(toy):
    _, g = toy
    mask = g.y == 0
    with pytest.raises(ValueError, match="both classes"):
        train(g, g.y, TrainConfig(epochs=1), SMALL_MODEL, train_mask=mask)


def test_history_csv():
    text = history_csv([{"epoch": 1, "loss": 0.5, "val_ap": 0.25, "val_auc": 0.75}])
    assert text == "epoch,loss,val_ap,val_auc\n1,0.5,0.25,0.75\n"


def test_tiled_tensors_restart_ranks():
    txs = make_txs([(DAY // 2, i % 3, 0, 100, False) for i in range(10)], start=0)
    gt = tiled_tensors(txs, 2 * DAY, 0, EdgeRule())
    assert gt.n == 10
    assert list(gt.ranks) == [0, 1, 2, 3, 0, 1, 2, 3, 0, 1]
    window = np.cumsum(gt.ranks == 0)
    assert (window[gt.src] == window[gt.dst]).all()
    assert gt.n_edges > gt.n  # some real edges inside windows
    assert np.array_equal(gt.X, build_graph(txs).X)


def test_rotating_views_share_nodes():
    txs = make_txs([(3600 * 5, i % 4, i % 2, 100, False) for i in range(40)], start=0)
    views = rotating_views(txs, 2 * DAY, 4)
    assert len(views) == 4
    assert all(np.array_equal(v.X, views[0].X) for v in views)
    assert any(not np.array_equal(v.ranks, views[0].ranks) for v in views[1:])
    with pytest.raises(ValueError):
        rotating_views(txs, DAY, 0)


def test_train_on_views(toy):
    ds, _ = toy
    views = rotating_views(ds.transactions, 5 * DAY, 3)
    y = build_graph(ds.transactions).y
    res = train(views, y, TrainConfig(epochs=4, patience=10), SMALL_MODEL)
    assert len(res.history) == 4
    with pytest.raises(ValueError):
        train([views[0], GraphTensors(np.zeros((1, views[0].X.shape[1])), [[]], [0])], y,
              TrainConfig(epochs=1), SMALL_MODEL)


def test_folds_partition():
    y = np.array([1, 0, 1, 0], float)
    folds = stratified_time_folds(y, np.arange(4), 2)
    assert [len(f) for f in folds] == [2, 2]
    assert sorted(np.concatenate(folds)) == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        stratified_time_folds(y, np.arange(4), 5)


@given(st.lists(st.sampled_from([0.0, 1.0, math.nan]), min_size=4, max_size=60), st.integers(2, 4))
def test_folds_partition_property(labels, k):
    y = np.array(labels)
    labelled = np.flatnonzero(~np.isnan(y))
    if k > len(labelled):
        return
    folds = stratified_time_folds(y, np.arange(len(y)), k)
    assert len(folds) == k
    flat = np.concatenate(folds)
    assert sorted(flat.tolist()) == labelled.tolist()


def test_kfold_cv(toy):
    ds, _ = toy
    grid = [(SMALL_MODEL, TrainConfig(epochs=3, patience=5)),
            (replace(SMALL_MODEL, use_pe=False), TrainConfig(epochs=3, patience=5))]
    rep = kfold_cv(ds, 3, grid)
    assert rep.k == 3 and len(rep.entries) == 2
    assert rep.selected == int(np.argmax([e["mean_ap"] for e in rep.entries]))
    assert all(len(e["fold_ap"]) == 3 for e in rep.entries)
    assert kfold_cv(ds, 3, grid).to_dict() == rep.to_dict()
    single = kfold_cv(ds, 2, grid[:1])
    assert single.selected == 0
    with pytest.raises(ValueError):
        kfold_cv(ds, 2, [])


def test_rfm_examples():
    txs = make_txs([(0, 0, 0, 1000, False), (100, 0, 1, 500, False), (DAY, 0, 1, 200, False)], start=0)
    f = rfm_features(txs)
    assert f.shape == (3, 12)
    assert list(f[0, 0:3]) == [DAY, 0, 0]
    assert list(f[1, 0:3]) == [100, 1, 10.0]
    # third tx: card seen 2 times within 7 days but only once in the last day
    assert list(f[2, 0:3]) == [DAY, 1, 5.0]
    assert list(f[2, 6:9]) == [DAY, 2, 15.0]
    assert list(f[2, 3:6]) == [DAY, 1, 5.0]


@given(tx_rows, st.integers(0, 40))
def test_rfm_no_leakage(rows, cut):
    txs = make_txs(rows)
    full = rfm_features(txs)
    assert np.array_equal(rfm_features(txs[:cut]), full[:min(cut, len(txs))].reshape(-1, 12))
    if txs:
        t = txs[len(txs) // 2].timestamp
        early = [i for i, tx in enumerate(txs) if tx.timestamp < t]
        assert np.array_equal(rfm_features(txs, as_of_ts=t)[early], full[early])


def test_logistic_separable():
    X = np.array([[0.0], [1.0]])
    m = train_logistic_baseline(X, [0, 1], epochs=200)
    assert list(m.predict_proba(X) >= 0.5) == [False, True]


def test_logistic_constant_features_give_base_rate():
    X = np.ones((8, 2))
    y = np.array([1, 0, 0, 0, 1, 0, 0, 0], float)
    with pytest.warns(UserWarning, match="zero-variance"):
        m = train_logistic_baseline(X, y, lr=0.5, epochs=2000)
    assert m.predict_proba(X) == pytest.approx(np.full(8, 0.25), abs=1e-6)


def test_logistic_gradient():
    rng = np.random.default_rng(0)
    Z, y, w, b = rng.normal(size=(20, 3)), (rng.random(20) < 0.3).astype(float), rng.normal(size=3), 0.2
    _, gw, gb = logistic_loss_and_grad(w, b, Z, y)
    h = 1e-6
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        num = (logistic_loss_and_grad(w + e, b, Z, y)[0] - logistic_loss_and_grad(w - e, b, Z, y)[0]) / (2 * h)
        assert gw[i] == pytest.approx(num, abs=1e-6)
    num = (logistic_loss_and_grad(w, b + h, Z, y)[0] - logistic_loss_and_grad(w, b - h, Z, y)[0]) / (2 * h)
    assert gb == pytest.approx(num, abs=1e-6)


def test_logistic_needs_both_classes():
    with pytest.raises(ValueError):
        train_logistic_baseline(np.ones((2, 1)), [1, 1])


def test_logistic_deterministic():
    rng = np.random.default_rng(1)
    X, y = rng.normal(size=(30, 4)), (rng.random(30) < 0.5).astype(float)
    a, b = train_logistic_baseline(X, y, seed=3), train_logistic_baseline(X, y, seed=3)
    assert a.weights.tobytes() == b.weights.tobytes() and a.bias == b.bias
