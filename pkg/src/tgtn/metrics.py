"""Ranking metrics for fraud scores: average precision, ROC AUC, confusion
counts and calendar-month breakdowns."""

import json
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone

import numpy as np


class MetricError(ValueError):
    pass


def _as_arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise MetricError(f"scores ({s.size}) and labels ({y.size}) differ in length")
    if not np.isin(y, (0, 1)).all():
        raise MetricError("labels must be 0/1")
    return s, y


def average_precision(scores, labels) -> float:
    """Mean of precision@r over the ranks r of the positives.

    Scores are sorted descending with a stable sort, so tied scores keep
    their input order. That makes AP deterministic but, with ties, dependent
    on the order the caller passes items in.
    """
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricError("average precision is undefined without positive labels")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision_at = np.cumsum(hits) / np.arange(1, len(hits) + 1)
    return float(precision_at[hits == 1].sum() / n_pos)


def roc_auc(scores, labels) -> float:
    """Mann-Whitney form: P(score_pos > score_neg) + 0.5 P(tie)."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError(f"ROC AUC needs both classes (got {n_pos} positive, {n_neg} negative)")
    order = np.argsort(s, kind="stable")
    sorted_s = s[order]
    ranks = np.empty(len(s))
    # midranks over runs of equal scores
    _, start, counts = np.unique(sorted_s, return_index=True, return_counts=True)
    mid = start + (counts + 1) / 2.0
    ranks[order] = np.repeat(mid, counts)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def confusion_at(scores, labels, threshold) -> dict:
    s, y = _as_arrays(scores, labels)
    pred = s >= threshold
    return {"tp": int((pred & (y == 1)).sum()), "fp": int((pred & (y == 0)).sum()),
            "tn": int((~pred & (y == 0)).sum()), "fn": int((~pred & (y == 1)).sum())}


@dataclass
class MetricsReport:
    n_pos: int
    n_neg: int
    threshold: float
    confusion: dict
    ap: float = None
    auc: float = None
    note: str = ""
    months: dict = field(default_factory=dict)

    @property
    def defined(self) -> bool:
        return self.ap is not None and self.auc is not None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["months"] = {k: v.to_dict() for k, v in self.months.items()}
        return d

    @classmethod
    def from_dict(cls, d) -> "MetricsReport":
        d = dict(d)
        months = {k: cls.from_dict(v) for k, v in d.pop("months", {}).items()}
        return cls(**d, months=months)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def metrics_report(scores, labels, threshold=0.5, strict=True) -> MetricsReport:
    """AP, AUC and confusion counts. With ``strict`` a single-class input raises."""
    s, y = _as_arrays(scores, labels)
    n_pos = int(y.sum())
    report = MetricsReport(n_pos=n_pos, n_neg=len(y) - n_pos, threshold=float(threshold),
                           confusion=confusion_at(s, y, threshold))
    if n_pos and report.n_neg:
        report.ap = average_precision(s, y)
        report.auc = roc_auc(s, y)
    elif strict:
        raise MetricError(f"ROC AUC needs both classes (got {n_pos} positive, "
                          f"{report.n_neg} negative)")
    else:
        report.note = "undefined: single class"
    return report


def month_key(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m")


def monthly_report(scores, labels, timestamps, threshold=0.5) -> MetricsReport:
    """Overall report plus one sub-report per UTC calendar month.

    Buckets (or the whole input) lacking a class get ``ap``/``auc`` of None
    and a note instead of raising.
    """
    s, y = _as_arrays(scores, labels)
    ts = np.asarray(timestamps, dtype=np.int64).reshape(-1)
    if ts.shape != s.shape:
        raise MetricError("timestamps and scores differ in length")
    if len(s) == 0:
        return MetricsReport(n_pos=0, n_neg=0, threshold=float(threshold),
                             confusion=confusion_at(s, y, threshold), note="empty")
    report = metrics_report(s, y, threshold, strict=False)
    keys = np.array([month_key(t) for t in ts])
    for key in sorted(set(keys.tolist())):
        sel = keys == key
        report.months[key] = metrics_report(s[sel], y[sel], threshold, strict=False)
    return report


def _fmt(x):
    return "   -  " if x is None else f"{x:.4f}"


def render_table(reports: dict) -> str:
    """Plain-text comparison: one row per model, AP/AUC columns per month."""
    months = sorted({m for r in reports.values() for m in r.months})
    cols = [f"{m} {k}" for m in months for k in ("AP", "AUC")] + ["All AP", "All AUC"]
    name_w = max([len("Model")] + [len(n) for n in reports])
    widths = [max(len(c), 6) for c in cols]
    lines = ["  ".join([f"{'Model':<{name_w}}"] + [f"{c:>{w}}" for c, w in zip(cols, widths)])]
    for name, r in reports.items():
        vals = []
        for m in months:
            sub = r.months.get(m)
            vals += [_fmt(sub.ap if sub else None), _fmt(sub.auc if sub else None)]
        vals += [_fmt(r.ap), _fmt(r.auc)]
        lines.append("  ".join([f"{name:<{name_w}}"] + [f"{v:>{w}}" for v, w in zip(vals, widths)]))
    return "\n".join(lines) + "\n"
