"""
Ablation against an RFM baseline
================================

Train the full model, the model without positional encoding, the model
without attention, and a logistic model on recency/frequency/monetary
features. All train before a time boundary and are scored after it.

This uses a small world and short training so it finishes quickly; the
acceptance suite runs the full-size version.
"""

from tgtn.ablation import run_ablation
from tgtn import GenConfig, TgtnConfig, TrainConfig, generate
from tgtn.metrics import render_table

###############################################################################

ds = generate(GenConfig(seed=0, n_cards=80, n_merchants=60, n_rings=60, n_crowds=60))
res = run_ablation(ds, model_config=TgtnConfig(d_model=16, n_heads=2, n_layers=1, d_ff=32),
                   train_config=TrainConfig(epochs=30, lr=5e-3, patience=10), n_views=4)
print(render_table(res.reports))

###############################################################################
# Per-epoch history of the full model.

for row in res.histories["TGTN"][-3:]:
    print(row)
