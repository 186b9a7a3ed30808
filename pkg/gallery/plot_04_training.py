"""
Training
========

Full-graph Adam training with a weighted cross-entropy, early stopping on a
temporal validation holdout, and a round trip through a checkpoint file.
"""

import tempfile
from pathlib import Path

import numpy as np

from tgtn import (GenConfig, TgtnConfig, TrainConfig, build_graph, generate, load_checkpoint,
                  forward, save_checkpoint, train)
from tgtn.train import history_csv

###############################################################################

ds = generate(GenConfig(seed=2, n_cards=40, n_merchants=25, n_rings=10, n_crowds=5))
g = build_graph(ds.transactions)
y = np.array([tx.label == "fraud" for tx in ds.transactions], dtype=float)
print(g.X.shape, int(y.sum()), "fraud")

mcfg = TgtnConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32)
res = train(g, y, TrainConfig(epochs=40, lr=5e-3, patience=10, seed=0), mcfg)
print("best epoch", res.best_epoch, "pos_weight", round(res.pos_weight, 2))
print(history_csv(res.history).splitlines()[-1])

###############################################################################
# Checkpoints store floats as hex, so a reload gives bit-identical scores.

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "ckpt.json"
    save_checkpoint(path, res.params, mcfg, g.X.shape[1])
    params, cfg, d_in, _ = load_checkpoint(path)
    assert np.array_equal(forward(g, params, cfg), forward(g, res.params, mcfg))
