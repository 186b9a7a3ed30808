"""Streaming replay: rule-engine prescreen, a sliding-window transaction graph
kept up to date by insertion and eviction, and per-arrival scoring with a
frozen model."""

import json
import time
from dataclasses import asdict, dataclass, field, replace
from decimal import Decimal

import numpy as np

from .graph import EdgeRule, EncoderConfig, TxGraph, build_graph
from .model import TgtnConfig, forward
from .txgen import Transaction

PASS = "pass"
BLOCKED = "blocked"
REJECTED = "rejected"
LATE_POLICIES = ("reject", "clamp-to-window-start")


@dataclass(frozen=True)
class Verdict:
    status: str
    reason: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    def __str__(self):
        return self.status if not self.reason else f"{self.status}({self.reason})"


@dataclass
class RuleEngine:
    card_blacklist: frozenset = frozenset()
    merchant_blacklist: frozenset = frozenset()
    max_amount: Decimal = None  # None disables the amount rule

    def __post_init__(self):
        self.card_blacklist = frozenset(self.card_blacklist)
        self.merchant_blacklist = frozenset(self.merchant_blacklist)
        if self.max_amount is not None:
            self.max_amount = Decimal(str(self.max_amount))

    @classmethod
    def from_dict(cls, d) -> "RuleEngine":
        unknown = set(d) - {"card_blacklist", "merchant_blacklist", "max_amount"}
        if unknown:
            raise ValueError(f"unknown rule engine fields: {sorted(unknown)}")
        return cls(d.get("card_blacklist", ()), d.get("merchant_blacklist", ()),
                   d.get("max_amount"))

    @classmethod
    def from_json(cls, text) -> "RuleEngine":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {"card_blacklist": sorted(self.card_blacklist),
                "merchant_blacklist": sorted(self.merchant_blacklist),
                "max_amount": None if self.max_amount is None else str(self.max_amount)}


def prescreen(tx: Transaction, engine: RuleEngine) -> Verdict:
    """First matching rule wins: card blacklist, merchant blacklist, amount."""
    if tx.card_id in engine.card_blacklist:
        return Verdict(BLOCKED, "card_blacklist")
    if tx.merchant_id in engine.merchant_blacklist:
        return Verdict(BLOCKED, "merchant_blacklist")
    if engine.max_amount is not None and tx.amount > engine.max_amount:
        return Verdict(BLOCKED, "max_amount")
    return Verdict(PASS)


@dataclass(frozen=True)
class WindowConfig:
    window_seconds: int = 14 * 86_400
    score_on: str = "every_arrival"
    late_event_policy: str = "reject"

    def validate(self, rule: EdgeRule):
        if self.window_seconds < rule.max_gap_seconds:
            raise ValueError(f"window_seconds ({self.window_seconds}) must be >= the edge rule's "
                             f"max_gap_seconds ({rule.max_gap_seconds})")
        if self.score_on != "every_arrival":
            raise ValueError(f"unsupported score_on {self.score_on!r}")
        if self.late_event_policy not in LATE_POLICIES:
            raise ValueError(f"late_event_policy must be one of {LATE_POLICIES}")


@dataclass
class StreamStats:
    processed: int = 0
    flagged: int = 0
    late: int = 0
    latencies_us: list = field(default_factory=list)
    max_window_nodes: int = 0

    def to_dict(self, latencies=True) -> dict:
        d = asdict(self)
        lat = np.array(self.latencies_us, dtype=np.float64)
        d["latency_us_p50"] = float(np.percentile(lat, 50)) if len(lat) else None
        d["latency_us_p99"] = float(np.percentile(lat, 99)) if len(lat) else None
        if not latencies:
            for k in ("latencies_us", "latency_us_p50", "latency_us_p99"):
                d.pop(k)
        return d


@dataclass
class StreamRecord:
    tx_id: str
    verdict: Verdict
    score: float = None
    window_nodes: int = 0
    latency_us: float = None

    def to_json(self, latency=True) -> str:
        d = {"tx_id": self.tx_id, "verdict": str(self.verdict), "score": self.score,
             "window_nodes": self.window_nodes}
        if latency:
            d["latency_us"] = self.latency_us
        return json.dumps(d, separators=(",", ":"))


class _Window:
    """The live graph and its late-event policy."""

    def __init__(self, rule, enc, window: WindowConfig):
        self.graph = TxGraph(rule, enc)
        self.window = window

    def admit(self, tx):
        """Evict, then insert. Returns the inserted (possibly re-stamped) transaction or None."""
        g = self.graph
        if len(g) and tx.timestamp < g.timestamps[-1]:
            if self.window.late_event_policy == "reject":
                return None
            # re-stamp at the current head of the stream, the earliest time it can enter
            tx = replace(tx, timestamp=int(g.timestamps[-1]))
        cutoff = tx.timestamp - self.window.window_seconds
        g.evict_before(cutoff)
        g.add(tx)
        return tx


def _stream(ds, params, model_config, edge_rule, enc, window, engine, on_arrival=None):
    window.validate(edge_rule)
    txs = getattr(ds, "transactions", ds)
    state = _Window(edge_rule, enc, window)
    stats = StreamStats()
    records = []
    for tx in txs:
        stats.processed += 1
        t0 = time.perf_counter()
        verdict = prescreen(tx, engine)
        if not verdict.passed:
            stats.flagged += 1
            records.append(StreamRecord(tx.tx_id, verdict, None, len(state.graph)))
            continue
        inserted = state.admit(tx)
        if inserted is None:
            stats.late += 1
            records.append(StreamRecord(tx.tx_id, Verdict(REJECTED, "late_event"), None,
                                        len(state.graph)))
            continue
        if inserted is not tx:
            stats.late += 1
        score = float(forward(state.graph, params, model_config, training=False)[-1])
        latency = (time.perf_counter() - t0) * 1e6
        stats.latencies_us.append(latency)
        stats.max_window_nodes = max(stats.max_window_nodes, len(state.graph))
        records.append(StreamRecord(tx.tx_id, verdict, score, len(state.graph), latency))
        if on_arrival is not None:
            on_arrival(list(state.graph.transactions), score)
    return records, stats


def replay(ds, params, model_config: TgtnConfig, edge_rule: EdgeRule = EdgeRule(),
           enc: EncoderConfig = EncoderConfig(), window: WindowConfig = WindowConfig(),
           engine: RuleEngine = RuleEngine()):
    """Score every arrival on the window graph as it stands after inserting it.

    Blocked transactions get no score and never enter the graph. A late event
    is either rejected or re-stamped to the newest timestamp in the window,
    depending on ``window.late_event_policy``.
    """
    return _stream(ds, params, model_config, edge_rule, enc, window, engine)


def consistency_check(ds, params, model_config: TgtnConfig, edge_rule: EdgeRule = EdgeRule(),
                      enc: EncoderConfig = EncoderConfig(), window: WindowConfig = WindowConfig(),
                      engine: RuleEngine = RuleEngine()) -> float:
    """Max |stream score - batch score| over arrivals, where the batch score
    comes from build_graph over exactly the window contents at that arrival."""
    worst = [0.0]

    def check(window_txs, score):
        g = build_graph(window_txs, edge_rule, enc)
        batch = float(forward(g, params, model_config, training=False)[-1])
        worst[0] = max(worst[0], abs(batch - score))

    _stream(ds, params, model_config, edge_rule, enc, window, engine, on_arrival=check)
    return worst[0]

