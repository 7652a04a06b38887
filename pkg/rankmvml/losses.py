"""Training objectives, quality targets and view fusion.

All losses take embeddings and predictions as :class:`~rankmvml.ndcore.Node`
values and masks (W, G, label graphs, correlation) as plain matrices, and
return 1x1 nodes. Masked positions are multiplied by exact zeros, so values
stored there never reach the loss.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Union

import numpy as np

from .errors import ContractError, DimensionError
from .ndcore import (
    EPS,
    Matrix,
    Node,
    as_matrix,
    const,
    detach,
    l2_normalize_rows,
    log,
    pairwise_cosine,
    row_sum,
    sum_all,
)
from .utils import _raise_if_errors, _validate_non_negative, _validate_unit_interval

logger = logging.getLogger(__name__)

LossValue = Union[Node, float]

PART_NAMES = ("re", "ma", "ge", "qd", "cls")


@dataclass(frozen=True)
class LossWeights:
    """Coefficients of the composite objective.

    ``gamma`` scales reconstruction, ``alpha`` the graph embedding term,
    ``beta`` sets the aggregation schedule 1 - beta**t and ``sigma`` truncates
    the label correlation matrix.
    """

    alpha: float = 0.1
    beta: float = 0.97
    gamma: float = 0.1
    sigma: float = 0.1

    def __post_init__(self):
        _raise_if_errors(
            [
                _validate_non_negative(self.alpha, "alpha"),
                _validate_non_negative(self.gamma, "gamma"),
                _validate_unit_interval(self.beta, "beta"),
                _validate_unit_interval(self.sigma, "sigma"),
            ]
        )

    def ma_coefficient(self, epoch: int) -> float:
        if epoch < 1:
            raise ContractError(f"Epoch index starts at 1, got {epoch}")
        return 1.0 - self.beta**epoch


@dataclass
class LossBreakdown:
    """Scalar values of every objective term for one batch or one epoch.

    ``l_mcce`` holds whichever classification loss was trained (``l_mbce``
    under the ``no-mcce`` ablations, where ``classification`` says so).
    """

    l_re: float = 0.0
    l_ma: float = 0.0
    l_ge: float = 0.0
    l_qd: float = 0.0
    l_mcce: float = 0.0
    l_total: float = 0.0
    ma_coefficient: float = 0.0
    classification: str = "mcce"
    objective: Optional[Node] = field(default=None, repr=False, compare=False)

    def is_finite(self) -> bool:
        values = [self.l_re, self.l_ma, self.l_ge, self.l_qd, self.l_mcce, self.l_total]
        return bool(np.isfinite(values).all())

    def to_dict(self) -> Dict[str, float]:
        """Flat history record; the classification column is named after its loss."""
        return {
            "l_re": self.l_re,
            "l_ma": self.l_ma,
            "l_ge": self.l_ge,
            "l_qd": self.l_qd,
            f"l_{self.classification}": self.l_mcce,
            "l_total": self.l_total,
            "ma_coefficient": self.ma_coefficient,
        }


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _value(x) -> Matrix:
    return x.value if isinstance(x, Node) else as_matrix(x)


def _check_mask(mask: Matrix, rows: int, cols: int, name: str) -> Matrix:
    mask = as_matrix(mask, name)
    if mask.shape != (rows, cols):
        raise DimensionError(name, mask.shape, (rows, cols))
    return mask


# =============================================================================
# REPRESENTATION LOSSES
# =============================================================================


def loss_re(
    views: Sequence,
    reconstructions: Sequence[Node],
    view_mask: Matrix,
    dims: Optional[Sequence[int]] = None,
) -> Node:
    """Masked reconstruction error, averaged over views.

    Each view's squared error is divided by d_v * n_b whatever the number of
    observed rows in the batch.
    """
    m = len(views)
    if len(reconstructions) != m:
        raise ContractError(
            f"loss_re got {m} views but {len(reconstructions)} reconstructions"
        )
    n_b = _value(views[0]).shape[0]
    w = _check_mask(view_mask, n_b, m, "W")
    if n_b == 0:
        return const(0.0)
    total = const(0.0)
    for v in range(m):
        x, x_bar = _as_node(views[v]), _as_node(reconstructions[v])
        if x.shape != x_bar.shape:
            raise DimensionError(f"loss_re view {v}", x.shape, x_bar.shape)
        d_v = dims[v] if dims is not None else x.cols
        diff = x_bar - x
        total = total + sum_all(row_sum(diff * diff) * w[:, [v]]) * (1.0 / (d_v * n_b))
    return total * (1.0 / m)


def loss_ma(
    embeddings: Sequence[Node], view_mask: Matrix, d_e: Optional[int] = None
) -> Node:
    """Pull together the normalized embeddings of one sample across its observed views.

    Sums over ordered view pairs; a pair observed together on no batch row adds 0.
    """
    m = len(embeddings)
    if m < 2:
        return const(0.0)
    zs = [_as_node(z) for z in embeddings]
    n_b = zs[0].rows
    d_e = d_e or zs[0].cols
    w = _check_mask(view_mask, n_b, m, "W")
    units = [l2_normalize_rows(z) for z in zs]
    total = const(0.0)
    for u in range(m):
        for v in range(m):
            if u == v:
                continue
            both = w[:, [u]] * w[:, [v]]
            count = both.sum()
            if count == 0:
                continue
            diff = units[u] - units[v]
            total = total + sum_all(row_sum(diff * diff) * both) * (1.0 / (count * d_e))
    return total


def loss_ge(
    embeddings: Sequence[Node],
    label_graph: Matrix,
    valid: Matrix,
    view_mask: Matrix,
) -> Node:
    """Cross-entropy between the label graph and each view's similarity graph.

    F = (cosine + 1) / 2 per view; only ordered pairs i != j with both views
    observed and a defined label agreement count.
    """
    m = len(embeddings)
    zs = [_as_node(z) for z in embeddings]
    n_b = zs[0].rows
    target = _check_mask(label_graph, n_b, n_b, "label graph")
    valid = _check_mask(valid, n_b, n_b, "label graph validity")
    w = _check_mask(view_mask, n_b, m, "W")
    off_diagonal = 1.0 - np.eye(n_b)
    total = const(0.0)
    for v, z in enumerate(zs):
        pairs = (w[:, [v]] @ w[:, [v]].T) * valid * off_diagonal
        count = pairs.sum()
        if count == 0:
            continue
        similarity = (pairwise_cosine(z) + 1.0) * 0.5
        bce = -(target * log(similarity) + (1.0 - target) * log(1.0 - similarity))
        total = total + sum_all(bce * pairs) * (1.0 / (2.0 * m * count))
    return total


# =============================================================================
# QUALITY DISCRIMINATION AND FUSION
# =============================================================================


def quality_targets(
    view_predictions: Sequence, labels: Matrix, label_mask: Matrix, view_mask: Matrix
) -> Matrix:
    """Per-sample view quality Q: how well each view alone predicts the known labels.

    Q'_{i,v} is the mean log-likelihood of the known labels of sample i under
    view v's prediction; Q is exp(Q') renormalized over the observed views.
    A sample without known labels gets uniform Q over its observed views. The
    result is a plain matrix, so it never carries gradient.
    """
    m = len(view_predictions)
    y = as_matrix(labels, "labels")
    n_b, c = y.shape
    g = _check_mask(label_mask, n_b, c, "G")
    w = _check_mask(view_mask, n_b, m, "W")
    known = g.sum(axis=1)
    direct = np.zeros((n_b, m))
    for v, pred in enumerate(view_predictions):
        p = _value(pred)
        if p.shape != y.shape:
            raise DimensionError(f"quality_targets view {v}", p.shape, y.shape)
        log_p, log_q = np.log(np.maximum(p, EPS)), np.log(np.maximum(1.0 - p, EPS))
        ll = (y * log_p + (1.0 - y) * log_q) * g
        direct[:, v] = np.where(known > 0, ll.sum(axis=1) / np.maximum(known, 1.0), 0.0)
    scores = np.exp(direct) * w
    denom = scores.sum(axis=1, keepdims=True)
    uniform = np.full_like(scores, 1.0 / m)
    return np.where(denom > 0, scores / np.maximum(denom, EPS), uniform)


def loss_qd(scores: Node, targets: Matrix) -> Node:
    """Cross-entropy of discriminator scores B against quality targets Q."""
    b = _as_node(scores)
    q = _check_mask(_value(targets), b.rows, b.cols, "Q")
    if b.rows == 0:
        return const(0.0)
    return -sum_all(q * log(b)) * (1.0 / b.rows)


def _weighted_sum(embeddings: Sequence, weights: Matrix) -> Node:
    zs = [_as_node(z) for z in embeddings]
    fused = zs[0] * weights[:, [0]]
    for v in range(1, len(zs)):
        if zs[v].shape != zs[0].shape:
            raise DimensionError("fuse", zs[0].shape, zs[v].shape)
        fused = fused + zs[v] * weights[:, [v]]
    return fused


def fuse(embeddings: Sequence, scores) -> Node:
    """Z_bar = sum_v B[:, v] * Z_v with B held constant."""
    if not embeddings:
        raise ContractError("fuse needs at least one embedding")
    b = detach(scores).value if isinstance(scores, Node) else as_matrix(scores, "B")
    n_b = _value(embeddings[0]).shape[0]
    b = _check_mask(b, n_b, len(embeddings), "B")
    return _weighted_sum(embeddings, b)


def fuse_baseline(embeddings: Sequence, view_mask: Matrix) -> Node:
    """Average of the observed views' embeddings."""
    if not embeddings:
        raise ContractError("fuse_baseline needs at least one embedding")
    n_b = _value(embeddings[0]).shape[0]
    w = _check_mask(view_mask, n_b, len(embeddings), "W")
    counts = w.sum(axis=1, keepdims=True)
    if np.any(counts == 0):
        raise ContractError("fuse_baseline needs at least one observed view per sample")
    return _weighted_sum(embeddings, w / counts)


def fuse_static(embeddings: Sequence, weights: Sequence[float]) -> Node:
    """Fixed per-view weights shared by every sample; positive and summing to 1."""
    weights = np.asarray(weights, dtype=np.float64).ravel()
    m = len(embeddings)
    if weights.shape != (m,):
        raise ContractError(f"fuse_static needs {m} weights, got {weights.size}")
    if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ContractError(
            "Static fusion weights must be positive and sum to 1, "
            f"got {weights.tolist()}"
        )
    n_b = _value(embeddings[0]).shape[0]
    return _weighted_sum(embeddings, np.tile(weights, (n_b, 1)))


# =============================================================================
# CLASSIFICATION LOSSES
# =============================================================================


def loss_mbce(predictions: Node, labels: Matrix, label_mask: Matrix) -> Node:
    """Binary cross-entropy over known labels, divided by n_b * c."""
    p = _as_node(predictions)
    y = _check_mask(labels, p.rows, p.cols, "Y")
    g = _check_mask(label_mask, p.rows, p.cols, "G")
    if p.rows == 0:
        return const(0.0)
    ll = y * log(p) + (1.0 - y) * log(1.0 - p)
    return -sum_all(ll * g) * (1.0 / (p.rows * p.cols))


def loss_mcce(
    predictions: Node, labels: Matrix, label_mask: Matrix, correlation: Matrix
) -> Node:
    """Correlation-weighted cross-entropy over known labels.

    For label j the positive self-information gathers -log P over row j of the
    truncated correlation and the negative one gathers -log(1 - P) over
    column j. With an identity correlation this is c times :func:`loss_mbce`.
    """
    p = _as_node(predictions)
    y = _check_mask(labels, p.rows, p.cols, "Y")
    g = _check_mask(label_mask, p.rows, p.cols, "G")
    corr = _check_mask(correlation, p.cols, p.cols, "correlation")
    if p.rows == 0:
        return const(0.0)
    info_pos = (-log(p) * g) @ corr.T
    info_neg = (-log(1.0 - p) * g) @ corr
    return sum_all((y * info_pos + (1.0 - y) * info_neg) * g) * (1.0 / p.rows)


def contrastive_diagnostic(
    embeddings: Sequence, view_mask: Matrix, temperature: float = 0.5
) -> float:
    """Cross-view InfoNCE value with in-batch negatives (inspection only, not trained).

    For every ordered view pair, each sample observed in both views is scored
    against all samples observed in the second view. Returns 0 when no pair
    qualifies.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    zs = [_value(z) for z in embeddings]
    m = len(zs)
    n_b = zs[0].shape[0]
    w = _check_mask(view_mask, n_b, m, "W")
    norms = [np.linalg.norm(z, axis=1, keepdims=True) for z in zs]
    units = [
        np.where(nv > EPS, z / np.maximum(nv, EPS), 0.0) for z, nv in zip(zs, norms)
    ]
    losses = []
    for u in range(m):
        for v in range(m):
            if u == v:
                continue
            anchors = np.flatnonzero((w[:, u] == 1) & (w[:, v] == 1))
            candidates = np.flatnonzero(w[:, v] == 1)
            if len(anchors) == 0:
                continue
            logits = units[u][anchors] @ units[v][candidates].T / temperature
            logits -= logits.max(axis=1, keepdims=True)
            log_norm = np.log(np.exp(logits).sum(axis=1))
            own = np.searchsorted(candidates, anchors)
            positive = logits[np.arange(len(anchors)), own]
            losses.extend((log_norm - positive).tolist())
    return float(np.mean(losses)) if losses else 0.0


# =============================================================================
# COMPOSITE OBJECTIVE
# =============================================================================


def total_loss(
    parts: Mapping[str, LossValue],
    weights: LossWeights,
    epoch: int,
    classification: str = "mcce",
) -> LossBreakdown:
    """gamma*re + (1 - beta**t)*ma + alpha*ge + qd + cls.

    ``parts`` maps any of ``re``, ``ma``, ``ge``, ``qd``, ``cls`` to a loss;
    missing parts count as zero. The differentiable total is kept on
    ``objective``.
    """
    unknown = set(parts) - set(PART_NAMES)
    if unknown:
        raise ContractError(f"Unknown loss parts: {sorted(unknown)}")
    coefficient = weights.ma_coefficient(epoch)
    scale = {
        "re": weights.gamma,
        "ma": coefficient,
        "ge": weights.alpha,
        "qd": 1.0,
        "cls": 1.0,
    }
    objective = const(0.0)
    for name in PART_NAMES:
        if name in parts:
            objective = objective + _as_node(parts[name]) * scale[name]

    def scalar(name: str) -> float:
        return _value(parts[name]).item() if name in parts else 0.0

    return LossBreakdown(
        l_re=scalar("re"),
        l_ma=scalar("ma"),
        l_ge=scalar("ge"),
        l_qd=scalar("qd"),
        l_mcce=scalar("cls"),
        l_total=objective.item(),
        ma_coefficient=coefficient,
        classification=classification,
        objective=objective,
    )
