"""Sentiment regression metrics: binary accuracy under both zero conventions,
multi-class accuracies, weighted F1, MAE, and Pearson correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class MetricsReport:
    n: int
    mae: float
    corr: float
    acc2_incl_zero: float | None
    f1_incl_zero: float | None
    acc2_excl_zero: float | None
    f1_excl_zero: float | None
    acc7: float | None = None
    acc5: float | None = None
    acc3: float | None = None

    def to_dict(self) -> dict:
        out = {"n": self.n, "mae": self.mae, "corr": self.corr,
               "acc2_incl_zero": self.acc2_incl_zero, "f1_incl_zero": self.f1_incl_zero,
               "acc2_excl_zero": self.acc2_excl_zero, "f1_excl_zero": self.f1_excl_zero}
        for name in ("acc7", "acc5", "acc3"):
            value = getattr(self, name)
            if value is not None:
                out[name] = value
        return out


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; defined as 0 when either side is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    da = a - a.mean()
    db = b - b.mean()
    denom = np.sqrt((da * da).sum() * (db * db).sum())
    if denom == 0.0:
        return 0.0
    return float((da * db).sum() / denom)


def weighted_f1(truth: np.ndarray, preds: np.ndarray) -> float:
    """Support-weighted mean of per-class F1 over the classes present in truth."""
    truth = np.asarray(truth)
    preds = np.asarray(preds)
    classes = np.unique(truth)
    total = truth.size
    score = 0.0
    for c in classes:
        support = int((truth == c).sum())
        tp = int(((preds == c) & (truth == c)).sum())
        predicted = int((preds == c).sum())
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        score += support / total * f1
    return float(score)


def _rounded_match(preds, labels, lo, hi):
    p = np.round(np.clip(preds, lo, hi))
    t = np.round(np.clip(labels, lo, hi))
    return float((p == t).mean())


def compute_metrics(preds, labels, label_range=(-3.0, 3.0)) -> MetricsReport:
    """Full metric suite for one prediction set.

    Binary accuracy/F1 come in two conventions: zero labels counted as
    non-negative, or dropped entirely. Multi-class accuracies follow the
    label range: 7- and 5-class for [-3, 3], 3- and 5-class for [-1, 1].
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"predictions {preds.shape} vs labels {labels.shape}")
    if preds.size == 0:
        raise ValueError("cannot score an empty prediction set")

    mae = float(np.abs(preds - labels).mean())
    corr = pearson(preds, labels)

    incl_truth = labels >= 0
    incl_preds = preds >= 0
    acc2_incl = float((incl_truth == incl_preds).mean())
    f1_incl = weighted_f1(incl_truth, incl_preds)

    nonzero = labels != 0
    if nonzero.any():
        excl_truth = labels[nonzero] > 0
        excl_preds = preds[nonzero] > 0
        acc2_excl = float((excl_truth == excl_preds).mean())
        f1_excl = weighted_f1(excl_truth, excl_preds)
    else:
        acc2_excl = None
        f1_excl = None

    lo, hi = label_range
    report = MetricsReport(
        n=int(preds.size), mae=mae, corr=corr,
        acc2_incl_zero=acc2_incl, f1_incl_zero=f1_incl,
        acc2_excl_zero=acc2_excl, f1_excl_zero=f1_excl,
    )
    if (lo, hi) == (-3.0, 3.0):
        report.acc7 = _rounded_match(preds, labels, -3, 3)
        report.acc5 = _rounded_match(preds, labels, -2, 2)
    elif (lo, hi) == (-1.0, 1.0):
        report.acc3 = _rounded_match(preds, labels, -1, 1)
        # five half-unit classes on the clipped range
        report.acc5 = _rounded_match(2.0 * preds, 2.0 * labels, -2, 2)
    return report


def interval_edges(label_range=(-3.0, 3.0)):
    """Unit sub-intervals; negatives close on the left, positives on the right,
    exact zeros are reported separately."""
    if label_range == (-3.0, 3.0) or label_range == (-3, 3):
        return [(-3.0, -2.0), (-2.0, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, 2.0), (2.0, 3.0)]
    lo, hi = label_range
    half = (hi - lo) / 4.0
    return [(lo + i * half, lo + (i + 1) * half) for i in range(4)]


def interval_label(lo: float, hi: float) -> str:
    def fmt(v):
        return f"{v:+g}" if v else "0"

    if hi <= 0:
        return f"[{fmt(lo)},{fmt(hi)})"
    return f"({fmt(lo)},{fmt(hi)}]"


def fine_grained_eval(preds, labels, label_range=(-3.0, 3.0)) -> dict:
    """Per-interval reports keyed by interval label, plus a 'zero' bucket.

    Interval member counts partition the set exactly; empty intervals are
    reported as absent rather than erroring.
    """
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    out = {}
    assigned = np.zeros(labels.shape, dtype=bool)
    zero_mask = labels == 0
    assigned |= zero_mask
    for lo, hi in interval_edges(label_range):
        if hi <= 0:
            mask = (labels >= lo) & (labels < hi)
        else:
            mask = (labels > lo) & (labels <= hi)
        mask &= ~zero_mask
        assigned |= mask
        if not mask.any():
            continue
        out[interval_label(lo, hi)] = compute_metrics(preds[mask], labels[mask], label_range)
    if zero_mask.any():
        out["zero"] = compute_metrics(preds[zero_mask], labels[zero_mask], label_range)
    if not assigned.all():
        leftover = labels[~assigned]
        raise ValueError(f"labels outside {label_range}: {leftover[:5]}")
    return out
