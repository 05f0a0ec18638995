"""Anomaly scores and the ranking metrics (PR-AUC, F1 at a tuned threshold, NPr@k).

All ranking metrics share one tie policy: descending score, then ascending
tx_id.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


def anomaly_score(s_neg, s_pos):
    """Mean over rounds of (negative score - positive score).

    Accepts (rounds,) or (rounds, n) arrays; near -1 is normal, near 0 anomalous.
    """
    s_neg = np.asarray(s_neg, dtype=np.float64)
    s_pos = np.asarray(s_pos, dtype=np.float64)
    if s_neg.shape != s_pos.shape:
        raise ValueError("negative and positive score lists differ in shape")
    if s_neg.size == 0 or s_neg.shape[0] == 0:
        raise ValueError("need at least one round")
    return np.mean(s_neg - s_pos, axis=0)


def rank_order(scores, tx_ids=None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if tx_ids is None:
        tx_ids = np.arange(scores.size)
    return np.lexsort((np.asarray(tx_ids), -scores))


def _check_binary(labels):
    labels = np.asarray(labels).astype(np.int64)
    n_pos = int(labels.sum())
    return labels, n_pos


def pr_auc(scores, labels, tx_ids=None) -> float:
    """Average precision: mean of the precision at each fraud's rank (step-wise)."""
    labels, n_pos = _check_binary(labels)
    if n_pos == 0 or n_pos == labels.size:
        raise ValueError("PR-AUC is an undefined metric without both positive and negative labels")
    hits = labels[rank_order(scores, tx_ids)]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, hits.size + 1)
    return float(precision[hits == 1].sum() / n_pos)


def f1_score(scores, labels, threshold: float) -> float:
    """F1 of the rule ``score > threshold``; 0 when precision or recall is undefined."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    pred = scores > threshold
    tp = int(np.sum(pred & (labels == 1)))
    fp = int(np.sum(pred & (labels == 0)))
    fn = int(np.sum(~pred & (labels == 1)))
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def threshold_candidates(scores) -> np.ndarray:
    u = np.unique(np.asarray(scores, dtype=np.float64))
    if u.size < 2:
        # a single distinct score: only "flag everything" is meaningful
        return np.array([np.nextafter(u[0], -np.inf)]) if u.size else np.array([])
    return (u[:-1] + u[1:]) / 2.0


def select_threshold(scores, labels) -> float:
    """Midpoint threshold maximizing F1 on validation data (lowest on ties)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels, n_pos = _check_binary(labels)
    if n_pos == 0:
        raise ValueError("validation set has no positive labels; threshold is undefined")
    cands = threshold_candidates(scores)
    # predicted positives at candidate c are the scores above it
    order = np.argsort(scores, kind="stable")
    s_sorted, l_sorted = scores[order], labels[order]
    first_above = np.searchsorted(s_sorted, cands, side="right")
    pos_above = np.concatenate([np.cumsum(l_sorted[::-1])[::-1], [0]])
    tp = pos_above[first_above]
    n_pred = scores.size - first_above
    f1 = np.where(tp > 0, 2 * tp / (n_pred + n_pos), 0.0)
    return float(cands[int(np.argmax(f1))])


@dataclass(frozen=True)
class AlertPrecision:
    pr: float
    gamma: float
    npr: float
    k: int
    n_fraud: int


def npr_at_k(scores, labels, k: int = 100, tx_ids=None) -> AlertPrecision | None:
    """Normalized alert precision of the top ``k``; ``None`` for days without fraud."""
    if k <= 0:
        raise ValueError("k must be >= 1")
    labels = np.asarray(labels).astype(np.int64)
    if labels.size == 0:
        raise ValueError("empty day")
    if labels.size < k:
        warnings.warn(f"day has {labels.size} transactions < k={k}; truncating k", RuntimeWarning,
                      stacklevel=2)
        k = labels.size
    n_fraud = int(labels.sum())
    if n_fraud == 0:
        return None
    top = rank_order(scores, tx_ids)[:k]
    pr = float(labels[top].sum()) / k
    gamma = 1.0 if n_fraud >= k else n_fraud / k
    return AlertPrecision(pr=pr, gamma=gamma, npr=pr / gamma, k=k, n_fraud=n_fraud)


@dataclass
class ScoredDay:
    day: int
    tx_ids: np.ndarray
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.tx_ids = np.asarray(self.tx_ids, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if not (self.tx_ids.size == self.scores.size == self.labels.size):
            raise ValueError("tx_ids, scores and labels differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("non-finite anomaly score")


def concat_days(days) -> ScoredDay:
    days = list(days)
    return ScoredDay(
        day=days[-1].day,
        tx_ids=np.concatenate([d.tx_ids for d in days]),
        scores=np.concatenate([d.scores for d in days]),
        labels=np.concatenate([d.labels for d in days]),
    )


@dataclass
class MetricReport:
    threshold: float
    k: int
    per_day: list[dict] = field(default_factory=list)

    def mean(self, metric: str) -> float:
        vals = [d[metric] for d in self.per_day if d.get(metric) is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def std(self, metric: str) -> float:
        vals = [d[metric] for d in self.per_day if d.get(metric) is not None]
        return float(np.std(vals)) if vals else float("nan")

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "k": self.k, "per_day": self.per_day}


def day_metrics(day: ScoredDay, threshold: float, k: int) -> dict:
    out = {"day": int(day.day), "n": int(day.labels.size), "n_fraud": int(day.labels.sum())}
    if 0 < out["n_fraud"] < out["n"]:
        out["pr_auc"] = pr_auc(day.scores, day.labels, day.tx_ids)
    else:
        out["pr_auc"] = None
    out["f1"] = f1_score(day.scores, day.labels, threshold)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ap = npr_at_k(day.scores, day.labels, k, day.tx_ids)
    out["npr_at_k"] = None if ap is None else ap.npr
    out["pr_at_k"] = None if ap is None else ap.pr
    return out


def evaluate(validation: list[ScoredDay], test: list[ScoredDay], k: int = 100) -> MetricReport:
    """Tune the F1 threshold on ``validation`` and score each test day."""
    val = concat_days(validation)
    threshold = select_threshold(val.scores, val.labels)
    report = MetricReport(threshold=threshold, k=k)
    for d in test:
        report.per_day.append(day_metrics(d, threshold, k))
    return report
