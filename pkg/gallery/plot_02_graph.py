"""
The transaction graph
=====================

Two transactions are linked when they share a card or a merchant and are
close enough in time. A degree cap keeps the graph sparse.
"""

from decimal import Decimal

from tgtn import EdgeRule, Transaction, TxGraph, build_graph, evict_before

###############################################################################
# Five hand-made payments. t0 and t1 share a card, t1 and t2 a merchant; t4
# is too far away from everything to be linked.

H = 3600
rows = [(0, "c1", "m1"), (H, "c1", "m2"), (2 * H, "c2", "m2"),
        (3 * H, "c3", "m3"), (100 * H, "c1", "m1")]
txs = [Transaction(f"t{i}", 1_700_000_000 + dt, c, m, Decimal("12.50"), "legit")
       for i, (dt, c, m) in enumerate(rows)]

rule = EdgeRule(max_gap_seconds=24 * H, degree_cap=8)
g = build_graph(txs, rule)
print(sorted(g.edge_set_by_id()))

###############################################################################
# Inserting one transaction at a time gives the very same graph, which is
# what lets a streaming scorer keep the graph live.

live = TxGraph(rule)
for tx in txs:
    live.add(tx)
assert live.edges() == g.edges()

###############################################################################
# Evicting old nodes is the same as rebuilding from the survivors.

cut = txs[2].timestamp
assert evict_before(g, cut).edges() == build_graph(txs[2:], rule).edges()

###############################################################################
# Node features: hashed card and merchant ids, log amount and time of day.

print(g.X.shape)
