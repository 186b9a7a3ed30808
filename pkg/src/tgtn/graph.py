"""Transaction graph: one node per transaction, edges between transactions
that share a card or merchant within a time gap.

Edges are derived in two stages. First every pair satisfying the sharing
and time-gap predicate becomes a *candidate* link. Then each node ranks its
candidates by recency (newest first, smaller tx_id on ties) and keeps the
top ``degree_cap``; an edge is stored only when each endpoint is within the
other's cap. Keeping the candidate lists around is what lets eviction
re-admit edges that an evicted newcomer had displaced.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .txgen import FRAUD, LEGIT, Transaction

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1

SECONDS_PER_DAY = 86_400


class OutOfOrderError(ValueError):
    """A transaction arrived older than the newest node already in the graph."""


def fnv1a_64(text: str) -> int:
    """64-bit FNV-1a over the UTF-8 bytes of ``text``."""
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True)
class EncoderConfig:
    card_buckets: int = 64
    merchant_buckets: int = 64
    amount_scale: float = 1.0

    @property
    def d_in(self) -> int:
        return self.card_buckets + self.merchant_buckets + 3


@dataclass(frozen=True)
class EdgeRule:
    link_on_shared_card: bool = True
    link_on_shared_merchant: bool = True
    max_gap_seconds: int = 7 * SECONDS_PER_DAY
    degree_cap: int = 32

    def __post_init__(self):
        if self.max_gap_seconds <= 0:
            raise ValueError("max_gap_seconds must be > 0")
        if self.degree_cap < 1:
            raise ValueError("degree_cap must be >= 1")

    def links(self, a: Transaction, b: Transaction) -> bool:
        if abs(a.timestamp - b.timestamp) > self.max_gap_seconds:
            return False
        return ((self.link_on_shared_card and a.card_id == b.card_id)
                or (self.link_on_shared_merchant and a.merchant_id == b.merchant_id))


def encode_features(tx: Transaction, enc: EncoderConfig = EncoderConfig()) -> np.ndarray:
    """[card one-hot | merchant one-hot | scaled log1p(amount) | sin, cos of time of day]."""
    v = np.zeros(enc.d_in)
    v[fnv1a_64(tx.card_id) % enc.card_buckets] = 1.0
    v[enc.card_buckets + fnv1a_64(tx.merchant_id) % enc.merchant_buckets] = 1.0
    v[-3] = enc.amount_scale * math.log1p(float(tx.amount))
    angle = 2.0 * math.pi * (tx.timestamp % SECONDS_PER_DAY) / SECONDS_PER_DAY
    v[-2] = math.sin(angle)
    v[-1] = math.cos(angle)
    return v


class TxGraph:
    """Mutable transaction graph; nodes are kept in insertion (timestamp) order.

    Single writer. ``add`` and ``evict_before`` mutate in place; the module
    level functions of the same name wrap them with the copy semantics the
    batch pipeline wants.
    """

    def __init__(self, rule: EdgeRule = EdgeRule(), enc: EncoderConfig = EncoderConfig()):
        self.rule = rule
        self.enc = enc
        self.transactions = []
        self._rows = []
        self._X = None
        self._adj = []
        self._cand = []
        self._top = []
        self._by_card = {}
        self._by_merchant = {}

    # --- read side -------------------------------------------------------

    def __len__(self):
        return len(self.transactions)

    @property
    def node_ids(self) -> list:
        return [tx.tx_id for tx in self.transactions]

    @property
    def timestamps(self) -> np.ndarray:
        return np.array([tx.timestamp for tx in self.transactions], dtype=np.int64)

    @property
    def labels(self) -> list:
        return [tx.label for tx in self.transactions]

    @property
    def y(self) -> np.ndarray:
        """1.0 fraud, 0.0 legit, nan unknown."""
        m = {FRAUD: 1.0, LEGIT: 0.0}
        return np.array([m.get(tx.label, np.nan) for tx in self.transactions])

    @property
    def X(self) -> np.ndarray:
        if self._X is None:
            self._X = (np.vstack(self._rows) if self._rows
                       else np.zeros((0, self.enc.d_in)))
        return self._X

    @property
    def d_in(self) -> int:
        return self.enc.d_in

    def neighbors(self, i: int) -> list:
        if not 0 <= i < len(self):
            raise IndexError(f"node index {i} out of range for graph with {len(self)} nodes")
        return sorted(self._adj[i])

    def edges(self) -> set:
        """Undirected edges as (i, j) with i < j."""
        return {(i, j) for i, nbrs in enumerate(self._adj) for j in nbrs if i < j}

    def edge_set_by_id(self) -> set:
        ids = self.node_ids
        return {(ids[i], ids[j]) for i, j in self.edges()}

    def degrees(self) -> np.ndarray:
        return np.array([len(a) for a in self._adj], dtype=np.int64)

    # --- write side ------------------------------------------------------

    def _rank_key(self, j):
        tx = self.transactions[j]
        return (-tx.timestamp, tx.tx_id)

    def _recompute_top(self, i):
        cand = self._cand[i]
        if len(cand) <= self.rule.degree_cap:
            self._top[i] = set(cand)
        else:
            self._top[i] = set(sorted(cand, key=self._rank_key)[:self.rule.degree_cap])

    def _relink(self, i):
        new = {j for j in self._top[i] if i in self._top[j]}
        old = self._adj[i]
        for j in old - new:
            self._adj[j].discard(i)
        for j in new - old:
            self._adj[j].add(i)
        self._adj[i] = new

    def _index(self, i, tx):
        self._by_card.setdefault(tx.card_id, []).append(i)
        self._by_merchant.setdefault(tx.merchant_id, []).append(i)

    def _recent(self, bucket, ts):
        out = []
        for j in reversed(bucket):
            if ts - self.transactions[j].timestamp > self.rule.max_gap_seconds:
                break
            out.append(j)
        return out

    def add(self, tx: Transaction) -> int:
        if self.transactions and tx.timestamp < self.transactions[-1].timestamp:
            raise OutOfOrderError(
                f"tx {tx.tx_id} at {tx.timestamp} is older than newest node "
                f"({self.transactions[-1].timestamp})")
        n = len(self.transactions)
        cand = set()
        if self.rule.link_on_shared_card:
            cand.update(self._recent(self._by_card.get(tx.card_id, ()), tx.timestamp))
        if self.rule.link_on_shared_merchant:
            cand.update(self._recent(self._by_merchant.get(tx.merchant_id, ()), tx.timestamp))
        self.transactions.append(tx)
        self._rows.append(encode_features(tx, self.enc))
        self._X = None
        self._adj.append(set())
        self._cand.append(sorted(cand))
        self._top.append(set())
        self._index(n, tx)
        for j in cand:
            self._cand[j].append(n)
        affected = [n, *sorted(cand)]
        for i in affected:
            self._recompute_top(i)
        for i in affected:
            self._relink(i)
        return n

    def evict_before(self, cutoff_ts: int) -> int:
        """Drop every node older than ``cutoff_ts``; returns how many were dropped."""
        k = 0
        while k < len(self.transactions) and self.transactions[k].timestamp < cutoff_ts:
            k += 1
        if k == 0:
            return 0
        if any(tx.timestamp < cutoff_ts for tx in self.transactions[k:]):
            # only possible for graphs assembled out of timestamp order
            raise OutOfOrderError("graph nodes are not in timestamp order")
        self.transactions = self.transactions[k:]
        self._rows = self._rows[k:]
        self._X = None
        self._cand = [[j - k for j in c if j >= k] for c in self._cand[k:]]
        n = len(self.transactions)
        self._top = [set() for _ in range(n)]
        self._adj = [set() for _ in range(n)]
        self._by_card = {}
        self._by_merchant = {}
        for i, tx in enumerate(self.transactions):
            self._index(i, tx)
            self._recompute_top(i)
        for i in range(n):
            self._adj[i] = {j for j in self._top[i] if i in self._top[j]}
        return k

    def copy(self) -> "TxGraph":
        g = TxGraph(self.rule, self.enc)
        g.transactions = list(self.transactions)
        g._rows = list(self._rows)
        g._adj = [set(a) for a in self._adj]
        g._cand = [list(c) for c in self._cand]
        g._top = [set(t) for t in self._top]
        g._by_card = {k: list(v) for k, v in self._by_card.items()}
        g._by_merchant = {k: list(v) for k, v in self._by_merchant.items()}
        return g


def build_graph(txs, rule: EdgeRule = EdgeRule(), enc: EncoderConfig = EncoderConfig()) -> TxGraph:
    """Batch construction: group by shared entity, sweep each group for pairs in the gap."""
    txs = list(txs)
    ts = [tx.timestamp for tx in txs]
    if any(a > b for a, b in zip(ts, ts[1:])):
        raise ValueError("build_graph needs transactions sorted ascending by timestamp")
    g = TxGraph(rule, enc)
    g.transactions = txs
    g._rows = [encode_features(tx, enc) for tx in txs]
    n = len(txs)
    cand = [set() for _ in range(n)]
    groups = []
    for i, tx in enumerate(txs):
        g._index(i, tx)
    if rule.link_on_shared_card:
        groups.extend(g._by_card.values())
    if rule.link_on_shared_merchant:
        groups.extend(g._by_merchant.values())
    for members in groups:
        lo = 0
        for hi, j in enumerate(members):
            while ts[j] - ts[members[lo]] > rule.max_gap_seconds:
                lo += 1
            for i in members[lo:hi]:
                cand[i].add(j)
                cand[j].add(i)
    g._cand = [sorted(c) for c in cand]
    g._top = [set() for _ in range(n)]
    for i in range(n):
        g._recompute_top(i)
    g._adj = [{j for j in g._top[i] if i in g._top[j]} for i in range(n)]
    return g


def add_transaction(g: TxGraph, tx: Transaction) -> int:
    return g.add(tx)


def evict_before(g: TxGraph, cutoff_ts: int) -> TxGraph:
    out = g.copy()
    out.evict_before(cutoff_ts)
    return out


def neighbors(g: TxGraph, i: int) -> list:
    return g.neighbors(i)


def dump_graph(g: TxGraph, edge_path, sidecar_path):
    """Debug dump: ``i j`` edge lines plus a JSON sidecar of node ids and timestamps."""
    with open(edge_path, "w", encoding="utf-8", newline="\n") as fh:
        for i, j in sorted(g.edges()):
            fh.write(f"{i} {j}\n")
    with open(sidecar_path, "w", encoding="utf-8") as fh:
        json.dump({"node_ids": g.node_ids, "timestamps": [int(t) for t in g.timestamps]}, fh)
