"""Synthetic card transactions with injected fraud rings, plus dataset I/O.

Legitimate traffic: every card starts shopping sessions as a homogeneous
Poisson process over ``[start_ts, end_ts)`` with ``legit_rate`` expected
sessions. A session is one purchase, or with probability ``spree_prob`` a
spree of 2..``spree_max`` purchases inside ``spree_seconds``. Amounts are
log-normal; merchants are Zipf-weighted by popularity.

A fraud ring takes over ``ring_size`` existing cards (fresh ones with
``compromised_cards=False``) and has each make ``ring_tx_per_card``
purchases inside one burst of ``ring_burst_seconds`` at ``ring_merchants``
popularity-weighted merchants. Every ring card's first purchase goes to the
ring's first merchant, so the ring's transactions always form one connected
piece of the transaction graph.

All randomness comes from :class:`tgtn.rng.SplitMix64`, so a config
reproduces the same dataset everywhere.
"""

import bisect
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from decimal import Decimal, InvalidOperation
from pathlib import Path

from .rng import SplitMix64

log = logging.getLogger(__name__)

FRAUD = "fraud"
LEGIT = "legit"
UNKNOWN = "unknown"
LABELS = (FRAUD, LEGIT, UNKNOWN)

_CENT = Decimal("0.01")


class ConfigError(ValueError):
    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class DatasetFormatError(ValueError):
    def __init__(self, line, field_name, message):
        super().__init__(f"line {line}, field {field_name!r}: {message}")
        self.line = line
        self.field = field_name


@dataclass(frozen=True)
class Transaction:
    tx_id: int
    timestamp: int
    card_id: str
    merchant_id: str
    amount: Decimal
    label: str = UNKNOWN

    @property
    def is_fraud(self) -> bool:
        return self.label == FRAUD

    def sort_key(self):
        return (self.timestamp, self.tx_id)


@dataclass
class GenConfig:
    seed: int = 0
    n_cards: int = 320
    n_merchants: int = 300
    start_ts: int = 1_675_209_600  # 2023-02-01T00:00:00Z
    end_ts: int = 1_680_307_200  # 2023-04-01T00:00:00Z
    legit_rate: float = 20.0
    n_rings: int = 300
    ring_size: int = 4
    ring_merchants: int = 2
    ring_burst_seconds: int = 3600
    fraud_amount_scale: float = 3.0
    ring_tx_per_card: int = 1
    amount_median: float = 40.0
    amount_sigma: float = 0.35
    merchant_zipf: float = 0.5
    card_amount_sigma: float = 1.0
    spree_prob: float = 0.15
    spree_max: int = 3
    spree_seconds: int = 3600
    n_crowds: int = 300
    crowd_size: int = 4
    compromised_cards: bool = True

    def validate(self):
        if self.end_ts <= self.start_ts:
            raise ConfigError("end_ts", f"must exceed start_ts ({self.end_ts} <= {self.start_ts})")
        for name in ("n_cards", "n_merchants", "n_rings", "ring_size", "ring_merchants",
                     "ring_tx_per_card"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigError(name, f"must be a non-negative integer, got {value!r}")
        if self.legit_rate < 0:
            raise ConfigError("legit_rate", "must be >= 0")
        if self.n_cards > 0 and self.legit_rate > 0 and self.n_merchants == 0:
            raise ConfigError("n_merchants", "legitimate traffic needs at least one merchant")
        if self.n_rings > 0:
            if self.ring_size < 2:
                raise ConfigError("ring_size", "must be >= 2 when n_rings > 0")
            if not 1 <= self.ring_merchants <= self.n_merchants:
                raise ConfigError("ring_merchants", "must be in [1, n_merchants] when n_rings > 0")
            if self.ring_tx_per_card < 1:
                raise ConfigError("ring_tx_per_card", "must be >= 1 when n_rings > 0")
            if not 0 < self.ring_burst_seconds <= self.end_ts - self.start_ts:
                raise ConfigError("ring_burst_seconds", "must be in (0, end_ts - start_ts]")
            if self.compromised_cards and self.ring_size > self.n_cards:
                raise ConfigError("ring_size", "compromised rings need ring_size <= n_cards")
        if self.fraud_amount_scale <= 0:
            raise ConfigError("fraud_amount_scale", "must be > 0")
        if self.amount_median <= 0:
            raise ConfigError("amount_median", "must be > 0")
        if self.amount_sigma < 0:
            raise ConfigError("amount_sigma", "must be >= 0")
        if self.merchant_zipf < 0:
            raise ConfigError("merchant_zipf", "must be >= 0")
        if not 0 <= self.spree_prob <= 1:
            raise ConfigError("spree_prob", "must be in [0, 1]")
        if self.spree_max < 2:
            raise ConfigError("spree_max", "must be >= 2")
        if self.spree_seconds <= 0:
            raise ConfigError("spree_seconds", "must be > 0")
        if self.card_amount_sigma < 0:
            raise ConfigError("card_amount_sigma", "must be >= 0")
        if self.n_crowds < 0 or self.crowd_size < 1:
            raise ConfigError("n_crowds", "need n_crowds >= 0 and crowd_size >= 1")
        if self.n_crowds > 0 and not 0 < self.ring_burst_seconds <= self.end_ts - self.start_ts:
            raise ConfigError("ring_burst_seconds", "must be in (0, end_ts - start_ts]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(sorted(unknown)[0], "unknown GenConfig field")
        return cls(**data)


@dataclass
class Dataset:
    transactions: list
    meta: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.transactions)

    def __iter__(self):
        return iter(self.transactions)

    @property
    def n_fraud(self) -> int:
        return sum(tx.is_fraud for tx in self.transactions)


def _amount(value: float) -> Decimal:
    return Decimal(repr(value)).quantize(_CENT)


def _card_name(i: int) -> str:
    return f"C{i:06d}"


def _merchant_name(i: int) -> str:
    return f"M{i:05d}"


def generate(config: GenConfig) -> Dataset:
    config.validate()
    root = SplitMix64(config.seed)
    legit_rng = root.fork(1)
    ring_rng = root.fork(2)
    level_rng = root.fork(3)
    crowd_rng = root.fork(4)
    span = config.end_ts - config.start_ts
    log_median = math.log(config.amount_median)
    n_total_cards = config.n_cards + (0 if config.compromised_cards
                                      else config.n_rings * config.ring_size)
    # per-card log spending level
    levels = [log_median + config.card_amount_sigma * level_rng.normal()
              for _ in range(n_total_cards)]

    cumulative = []
    total = 0.0
    for rank in range(config.n_merchants):
        total += 1.0 / (rank + 1) ** config.merchant_zipf
        cumulative.append(total)

    def pick_merchant(rng):
        u = rng.uniform() * total
        return min(bisect.bisect_right(cumulative, u), config.n_merchants - 1)

    def pick_merchants(rng, k):
        chosen = []
        while len(chosen) < k:
            m = pick_merchant(rng)
            if m not in chosen:
                chosen.append(m)
        return chosen

    def draw_amount(rng, card, scale=1.0):
        return _amount(scale * math.exp(levels[card] + config.amount_sigma * rng.normal()))

    raw = []  # (ts, card, merchant, amount, label)
    ring_of = {}  # raw index -> ring number
    if config.legit_rate > 0:
        mean_gap = span / config.legit_rate
        for card in range(config.n_cards):
            rng = legit_rng.fork(card)
            t = config.start_ts + rng.exponential(mean_gap)
            while t < config.end_ts:
                size = 1
                if rng.uniform() < config.spree_prob:
                    size = 2 + rng.below(config.spree_max - 1)
                for k in range(size):
                    ts = int(t) + (rng.below(config.spree_seconds) if k else 0)
                    raw.append((min(ts, config.end_ts - 1), _card_name(card),
                                _merchant_name(pick_merchant(rng)), draw_amount(rng, card), LEGIT))
                t += rng.exponential(mean_gap)

    def burst(rng, cards, merchants, tx_per_card, label, scale, ring=None):
        start = config.start_ts + rng.below(span - config.ring_burst_seconds + 1)
        for card in cards:
            for k in range(tx_per_card):
                ts = min(start + rng.below(config.ring_burst_seconds), config.end_ts - 1)
                merchant = merchants[0] if k == 0 else merchants[rng.below(len(merchants))]
                if ring is not None:
                    ring_of[len(raw)] = ring
                raw.append((ts, _card_name(card), _merchant_name(merchant),
                            draw_amount(rng, card, scale), label))

    if config.n_cards >= config.crowd_size:
        for crowd in range(config.n_crowds):
            rng = crowd_rng.fork(crowd)
            burst(rng, rng.sample(range(config.n_cards), config.crowd_size),
                  pick_merchants(rng, 1), 1, LEGIT, 1.0)

    next_card = config.n_cards
    for ring in range(config.n_rings):
        rng = ring_rng.fork(ring)
        merchants = pick_merchants(rng, config.ring_merchants)
        if config.compromised_cards:
            cards = rng.sample(range(config.n_cards), config.ring_size)
        else:
            cards = list(range(next_card, next_card + config.ring_size))
            next_card += config.ring_size
        burst(rng, cards, merchants, config.ring_tx_per_card, FRAUD, config.fraud_amount_scale,
              ring)

    # generation order breaks timestamp ties before ids are assigned
    order = sorted(range(len(raw)), key=lambda k: (raw[k][0], k))
    txs = [Transaction(tx_id=i, timestamp=raw[k][0], card_id=raw[k][1], merchant_id=raw[k][2],
                       amount=raw[k][3], label=raw[k][4])
           for i, k in enumerate(order)]
    rings = [[] for _ in range(config.n_rings)]
    for i, k in enumerate(order):
        if k in ring_of:
            rings[ring_of[k]].append(i)
    return Dataset(txs, meta={"generator": asdict(config), "rings": rings})


def temporal_split(ds: Dataset, boundary_ts: int):
    left = [tx for tx in ds.transactions if tx.timestamp < boundary_ts]
    right = [tx for tx in ds.transactions if tx.timestamp >= boundary_ts]
    return (Dataset(left, meta={**ds.meta, "split": f"ts < {boundary_ts}"}),
            Dataset(right, meta={**ds.meta, "split": f"ts >= {boundary_ts}"}))


def negative_sample(ds: Dataset, keep_ratio: float = 3.0, seed: int = 0) -> Dataset:
    """Keep every fraud transaction and ``keep_ratio`` legitimate ones per fraud.

    Legitimate transactions are drawn uniformly without replacement; when
    fewer are available than requested all of them are kept.
    """
    if keep_ratio <= 0:
        raise ValueError(f"keep_ratio must be > 0, got {keep_ratio}")
    fraud = [tx for tx in ds.transactions if tx.label == FRAUD]
    legit = [tx for tx in ds.transactions if tx.label == LEGIT]
    meta = {**ds.meta, "negative_sample": {"keep_ratio": keep_ratio, "seed": seed}}
    if not fraud:
        message = "negative_sample: dataset has no fraud transactions; returning empty dataset"
        log.warning(message)
        meta["warnings"] = list(ds.meta.get("warnings", [])) + [message]
        return Dataset([], meta=meta)
    want = min(len(legit), int(math.floor(keep_ratio * len(fraud))))
    kept = SplitMix64(seed).sample(legit, want)
    return Dataset(sorted(fraud + kept, key=Transaction.sort_key), meta=meta)


def transaction_to_json(tx: Transaction) -> str:
    return json.dumps({"tx_id": tx.tx_id, "ts": tx.timestamp, "card": tx.card_id,
                       "merchant": tx.merchant_id, "amount": f"{tx.amount:.2f}",
                       "label": tx.label}, separators=(",", ":"))


def save_dataset(ds: Dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tx in ds.transactions:
            fh.write(transaction_to_json(tx))
            fh.write("\n")


_FIELDS = ("tx_id", "ts", "card", "merchant", "amount", "label")


def parse_transaction(line: str, lineno: int = 1) -> Transaction:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(lineno, "<json>", str(exc)) from None
    if not isinstance(obj, dict):
        raise DatasetFormatError(lineno, "<json>", "expected a JSON object")
    for name in _FIELDS:
        if name not in obj:
            raise DatasetFormatError(lineno, name, "missing")
    extra = set(obj) - set(_FIELDS)
    if extra:
        raise DatasetFormatError(lineno, sorted(extra)[0], "unexpected field")
    for name in ("tx_id", "ts"):
        if not isinstance(obj[name], int) or isinstance(obj[name], bool):
            raise DatasetFormatError(lineno, name, "must be an integer")
    for name in ("card", "merchant"):
        if not isinstance(obj[name], str):
            raise DatasetFormatError(lineno, name, "must be a string")
    if not isinstance(obj["amount"], str):
        raise DatasetFormatError(lineno, "amount", "must be a decimal string")
    try:
        amount = Decimal(obj["amount"])
    except InvalidOperation:
        raise DatasetFormatError(lineno, "amount", f"not a decimal: {obj['amount']!r}") from None
    if not amount.is_finite() or amount < 0:
        raise DatasetFormatError(lineno, "amount", f"must be finite and >= 0, got {obj['amount']}")
    if amount != amount.quantize(_CENT):
        raise DatasetFormatError(lineno, "amount", "more than 2 fractional digits")
    if obj["label"] not in LABELS:
        raise DatasetFormatError(lineno, "label", f"must be one of {LABELS}, got {obj['label']!r}")
    return Transaction(obj["tx_id"], obj["ts"], obj["card"], obj["merchant"],
                       amount.quantize(_CENT), obj["label"])


def load_dataset(path) -> Dataset:
    txs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            txs.append(parse_transaction(line, lineno))
    meta = {"source": str(Path(path))}
    seen = set()
    for tx in txs:
        if tx.tx_id in seen:
            raise DatasetFormatError(0, "tx_id", f"duplicate tx_id {tx.tx_id}")
        seen.add(tx.tx_id)
    keys = [tx.sort_key() for tx in txs]
    if any(a > b for a, b in zip(keys, keys[1:])):
        message = f"{path}: input not sorted by (ts, tx_id); re-sorted"
        warnings.warn(message, stacklevel=2)
        meta["warnings"] = [message]
        txs.sort(key=Transaction.sort_key)
    return Dataset(txs, meta=meta)
