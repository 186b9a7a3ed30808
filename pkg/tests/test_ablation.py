import numpy as np
import pytest

from tgtn.ablation import (VARIANTS, default_boundary, loss_mask_for, run_ablation, scoring_blocks,
                           variant_config)
from tgtn.graph import EdgeRule
from tgtn.model import TgtnConfig
from tgtn.train import DAY, TrainConfig
from tgtn.txgen import GenConfig, generate


def test_variant_config():
    base = TgtnConfig()
    assert variant_config("TGTN", base) == base
    assert not variant_config("TGTN-noPE", base).use_pe
    assert not variant_config("TGTN-noAT", base).use_attention
    with pytest.raises(KeyError):
        variant_config("GAT", base)


def test_scoring_blocks_cover_tail_once():
    ds = generate(GenConfig(seed=2, n_cards=30, n_merchants=20, n_rings=4, n_crowds=2))
    b = default_boundary(ds)
    gt, scored = scoring_blocks(ds.transactions, b, 14 * DAY, 7 * DAY)
    tail = [tx for tx in ds if tx.timestamp >= b]
    assert scored.sum() == len(tail)
    assert gt.n == len(scored)


def test_loss_mask_keeps_all_fraud():
    ds = generate(GenConfig(seed=2, n_cards=30, n_merchants=20, n_rings=4, n_crowds=2))
    mask = loss_mask_for([tx.tx_id for tx in ds], ds, 3.0, 0)
    fraud = np.array([tx.is_fraud for tx in ds])
    assert mask[fraud].all()
    assert mask.sum() == fraud.sum() * 4


def test_small_run_produces_all_rows():
    ds = generate(GenConfig(seed=5, n_cards=40, n_merchants=25, n_rings=12, n_crowds=6))
    res = run_ablation(ds, model_config=TgtnConfig(d_model=8, n_heads=2, n_layers=1, d_ff=16),
                       train_config=TrainConfig(epochs=3), n_views=2)
    assert list(res.reports) == list(VARIANTS)
    n_test = sum(tx.timestamp >= res.boundary_ts for tx in ds)
    for name in VARIANTS:
        assert len(res.scores[name]) == n_test
        assert res.reports[name].n_pos + res.reports[name].n_neg == n_test
