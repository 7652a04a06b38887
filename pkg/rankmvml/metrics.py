"""Multi-label evaluation metrics and their brute-force reference."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from sklearn.metrics import hamming_loss as _sk_hamming_loss
from sklearn.metrics import roc_auc_score

from .errors import DimensionError, UndefinedMetricError
from .ndcore import Matrix, as_matrix
from .utils import write_json

logger = logging.getLogger(__name__)

METRIC_NAMES = ("ap", "one_minus_hl", "one_minus_rl", "auc", "oe", "cov")


@dataclass
class MetricsReport:
    """The six scores on one evaluation pool, all in [0, 1].

    AP, 1-HL, 1-RL and AUC are higher-is-better; OE and Cov lower-is-better.
    A metric with no valid support is ``None``.
    """

    ap: Optional[float]
    one_minus_hl: float
    one_minus_rl: Optional[float]
    auc: Optional[float]
    oe: Optional[float]
    cov: Optional[float]
    n_eval: int
    skipped: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        payload: Dict[str, Any] = {name: getattr(self, name) for name in METRIC_NAMES}
        payload["n_eval"] = self.n_eval
        payload["skipped"] = dict(sorted(self.skipped.items()))
        return payload

    def values(self) -> Dict[str, Optional[float]]:
        return {name: getattr(self, name) for name in METRIC_NAMES}


def _check_inputs(scores, labels) -> Tuple[Matrix, Matrix]:
    p = as_matrix(scores, "scores")
    y = as_matrix(labels, "labels")
    if p.shape != y.shape:
        raise DimensionError("metrics", p.shape, y.shape)
    return p, y


def _ranks(p: Matrix) -> np.ndarray:
    """1-based rank of every label per row; ties go to the lower label index."""
    order = np.argsort(-p, axis=1, kind="stable")
    ranks = np.empty_like(order)
    rows = np.arange(p.shape[0])[:, None]
    ranks[rows, order] = np.arange(1, p.shape[1] + 1)
    return ranks


def _require(values: list, metric: str) -> float:
    if not values:
        raise UndefinedMetricError(f"{metric} is undefined: no sample qualifies")
    return float(np.mean(values))


# =============================================================================
# FAST METRICS
# =============================================================================


def _average_precision(p: Matrix, y: Matrix) -> Tuple[float, int]:
    ranks = _ranks(p)
    per_row, skipped = [], 0
    for i in range(p.shape[0]):
        positive_ranks = np.sort(ranks[i, y[i] == 1])
        if positive_ranks.size == 0:
            skipped += 1
            continue
        hits = np.arange(1, positive_ranks.size + 1)
        per_row.append(float(np.mean(hits / positive_ranks)))
    return _require(per_row, "AP"), skipped


def average_precision(scores, labels) -> float:
    """Mean over samples of the precision at each relevant label's rank."""
    return _average_precision(*_check_inputs(scores, labels))[0]


def hamming_loss(scores, labels, threshold: float = 0.5) -> float:
    """Fraction of label cells where (score > threshold) disagrees with the truth."""
    p, y = _check_inputs(scores, labels)
    if p.size == 0:
        raise UndefinedMetricError("HL is undefined on an empty pool")
    return float(_sk_hamming_loss(y.astype(int), (p > threshold).astype(int)))


def _ranking_loss(p: Matrix, y: Matrix) -> Tuple[float, int]:
    per_row, skipped = [], 0
    for i in range(p.shape[0]):
        positive = p[i, y[i] == 1]
        negative = np.sort(p[i, y[i] == 0])
        if positive.size == 0 or negative.size == 0:
            skipped += 1
            continue
        below_or_equal = np.searchsorted(negative, positive, side="right")
        strictly_below = np.searchsorted(negative, positive, side="left")
        above = negative.size - below_or_equal
        ties = below_or_equal - strictly_below
        pairs = positive.size * negative.size
        per_row.append(float((above.sum() + 0.5 * ties.sum()) / pairs))
    return _require(per_row, "RL"), skipped


def ranking_loss(scores, labels) -> float:
    """Fraction of (positive, negative) label pairs ordered wrongly; ties count half."""
    return _ranking_loss(*_check_inputs(scores, labels))[0]


def _auc(p: Matrix, y: Matrix) -> Tuple[float, int]:
    per_label, skipped = [], 0
    for j in range(p.shape[1]):
        column = y[:, j]
        if column.min() == column.max():
            skipped += 1
            continue
        per_label.append(float(roc_auc_score(column.astype(int), p[:, j])))
    if not per_label:
        raise UndefinedMetricError(
            "AUC is undefined: no label has both positive and negative samples"
        )
    return float(np.mean(per_label)), skipped


def auc(scores, labels) -> float:
    """Macro average of the per-label ROC AUC; labels lacking a class are left out."""
    return _auc(*_check_inputs(scores, labels))[0]


def _one_error(p: Matrix, y: Matrix) -> Tuple[float, int]:
    order = np.argsort(-p, axis=1, kind="stable")
    has_positive = y.sum(axis=1) > 0
    top = order[has_positive, 0]
    misses = y[has_positive][np.arange(top.size), top] == 0
    return _require(misses.astype(float).tolist(), "OE"), int((~has_positive).sum())


def one_error(scores, labels) -> float:
    return _one_error(*_check_inputs(scores, labels))[0]


def _coverage(p: Matrix, y: Matrix) -> Tuple[float, int]:
    ranks = _ranks(p)
    has_positive = y.sum(axis=1) > 0
    deepest = np.where(y == 1, ranks, 0).max(axis=1)[has_positive] - 1
    return _require((deepest / p.shape[1]).tolist(), "Cov"), int((~has_positive).sum())


def coverage(scores, labels) -> float:
    """Mean depth of the lowest-ranked true label, minus one, divided by c."""
    return _coverage(*_check_inputs(scores, labels))[0]


_FAST = {
    "ap": _average_precision,
    "one_minus_rl": _ranking_loss,
    "auc": _auc,
    "oe": _one_error,
    "cov": _coverage,
}


def evaluate(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Compute the full report; undefined metrics are logged and reported as None."""
    p, y = _check_inputs(scores, labels)
    values: Dict[str, Optional[float]] = {}
    skipped: Dict[str, int] = {}
    for name, fn in _FAST.items():
        try:
            value, skipped[name] = fn(p, y)
        except UndefinedMetricError as e:
            logger.warning(str(e))
            value, skipped[name] = None, p.shape[1] if name == "auc" else p.shape[0]
        values[name] = value
        if skipped[name]:
            logger.warning(f"{name}: skipped {skipped[name]} degenerate rows or labels")
    hl = hamming_loss(p, y, threshold) if p.size else 1.0
    rl = values["one_minus_rl"]
    return MetricsReport(
        ap=values["ap"],
        one_minus_hl=1.0 - hl,
        one_minus_rl=None if rl is None else 1.0 - rl,
        auc=values["auc"],
        oe=values["oe"],
        cov=values["cov"],
        n_eval=p.shape[0],
        skipped=skipped,
    )


# =============================================================================
# BRUTE-FORCE REFERENCE
# =============================================================================


def oracle_all(scores, labels, threshold: float = 0.5) -> MetricsReport:
    """Recompute every metric by exhaustive enumeration with plain Python loops.

    Only meant for small inputs in tests; shares no code with the fast path.
    """
    p, y = _check_inputs(scores, labels)
    p_rows = p.tolist()
    y_rows = [[int(v) for v in row] for row in y.tolist()]
    n, c = p.shape

    def rank(row, j):
        ahead = [k for k in range(c) if row[k] > row[j] or (row[k] == row[j] and k < j)]
        return 1 + len(ahead)

    ap, rl, oe, cov = [], [], [], []
    skipped = {"ap": 0, "one_minus_rl": 0, "auc": 0, "oe": 0, "cov": 0}
    wrong_cells = 0
    for scores_i, truth in zip(p_rows, y_rows):
        predicted = [scores_i[j] > threshold for j in range(c)]
        wrong_cells += sum(1 for j in range(c) if predicted[j] != (truth[j] == 1))
        positives = [j for j in range(c) if truth[j] == 1]
        negatives = [j for j in range(c) if truth[j] == 0]
        if not positives:
            skipped["ap"] += 1
            skipped["oe"] += 1
            skipped["cov"] += 1
        else:
            ranks = {j: rank(scores_i, j) for j in range(c)}
            precisions = []
            for j in positives:
                at_or_above = sum(1 for k in positives if ranks[k] <= ranks[j])
                precisions.append(at_or_above / ranks[j])
            ap.append(sum(precisions) / len(precisions))
            top = [j for j in range(c) if ranks[j] == 1][0]
            oe.append(0.0 if truth[top] == 1 else 1.0)
            cov.append((max(ranks[j] for j in positives) - 1) / c)
        if not positives or not negatives:
            skipped["one_minus_rl"] += 1
        else:
            bad = 0.0
            for a in positives:
                for b in negatives:
                    if scores_i[a] < scores_i[b]:
                        bad += 1.0
                    elif scores_i[a] == scores_i[b]:
                        bad += 0.5
            rl.append(bad / (len(positives) * len(negatives)))

    per_label = []
    for j in range(c):
        pos = [p_rows[i][j] for i in range(n) if y_rows[i][j] == 1]
        neg = [p_rows[i][j] for i in range(n) if y_rows[i][j] == 0]
        if not pos or not neg:
            skipped["auc"] += 1
            continue
        good = 0.0
        for a in pos:
            for b in neg:
                if a > b:
                    good += 1.0
                elif a == b:
                    good += 0.5
        per_label.append(good / (len(pos) * len(neg)))

    def mean(values):
        return sum(values) / len(values) if values else None

    rl_mean = mean(rl)
    return MetricsReport(
        ap=mean(ap),
        one_minus_hl=1.0 - wrong_cells / (n * c) if n * c else 0.0,
        one_minus_rl=None if rl_mean is None else 1.0 - rl_mean,
        auc=mean(per_label),
        oe=mean(oe),
        cov=mean(cov),
        n_eval=n,
        skipped=skipped,
    )


# =============================================================================
# BASELINES AND EMISSION
# =============================================================================


def label_prior_scores(labels: Matrix, label_mask: Matrix, n: int) -> Matrix:
    """Score every sample with the known-label frequency of each class."""
    y = as_matrix(labels, "labels")
    g = as_matrix(label_mask, "label_mask")
    known = g.sum(axis=0)
    prior = np.where(known > 0, (y * g).sum(axis=0) / np.maximum(known, 1.0), 0.0)
    return np.tile(prior, (n, 1))


def write_metrics_json(
    report: Union[MetricsReport, Dict[str, Any]], path: Union[str, Path], **extra: Any
) -> Path:
    payload = report.to_dict() if isinstance(report, MetricsReport) else dict(report)
    payload.update(extra)
    return write_json(payload, path)
