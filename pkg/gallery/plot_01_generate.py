"""
Synthetic card transactions
===========================

Generate a labelled stream of card payments with planted fraud rings, save it
as JSON Lines and read it back.
"""

import tempfile
from collections import Counter
from pathlib import Path

from tgtn import GenConfig, generate, load_dataset, save_dataset

###############################################################################
# A small world: 60 cards, 40 merchants, a handful of rings. The generator is
# driven by one integer seed, so the same config always gives the same file.

cfg = GenConfig(seed=3, n_cards=60, n_merchants=40, n_rings=12, n_crowds=10)
ds = generate(cfg)
print(len(ds.transactions), "transactions")
print(Counter(tx.label for tx in ds.transactions))

###############################################################################
# Each ring is a burst: several cards hitting the same couple of merchants
# within an hour. ``meta["rings"]`` lists the tx_ids of every ring.

by_id = {tx.tx_id: tx for tx in ds.transactions}
ring = [by_id[t] for t in ds.meta["rings"][0]]
for tx in ring:
    print(tx.timestamp, tx.card_id, tx.merchant_id, tx.amount, tx.label)

###############################################################################
# Round trip through JSON Lines. Amounts are decimals, so nothing is lost.

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "tx.jsonl"
    save_dataset(ds, path)
    print(path.read_text().splitlines()[0])
    assert load_dataset(path).transactions == ds.transactions
