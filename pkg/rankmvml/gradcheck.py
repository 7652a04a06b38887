"""Gradient-check cases over every training loss on a tiny random instance.

Each case builds ``(objective, params)`` for :func:`~rankmvml.ndcore.grad_check`.
Quantities the training step holds constant (quality targets, fusion weights
and discriminator inputs) are evaluated once at the base parameters, so the
finite differences see the same function the backward pass differentiates.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from .dataset import build_correlation, label_similarity_graph, truncate_correlation
from .errors import ContractError
from .losses import (
    LossWeights,
    fuse,
    loss_ge,
    loss_ma,
    loss_mbce,
    loss_mcce,
    loss_qd,
    loss_re,
    quality_targets,
    total_loss,
)
from .model import BoundModel, ModelConfig, RankModel, init_model
from .ndcore import GradCheckReport, Matrix, Node, RngStream, const, grad_check, sum_all

logger = logging.getLogger(__name__)

Objective = Callable[[Mapping[str, Node]], Node]
CaseBuilder = Callable[[int], Tuple[Objective, Dict[str, Matrix]]]

GRADCHECK_CASES: Dict[str, CaseBuilder] = {}


def register_case(name: str):
    def decorator(builder: CaseBuilder) -> CaseBuilder:
        GRADCHECK_CASES[name] = builder
        return builder

    return decorator


@dataclass
class TinyProblem:
    """A small model with one random batch."""

    model: RankModel
    views: List[Matrix]
    labels: Matrix
    label_mask: Matrix
    view_mask: Matrix
    correlation: Matrix

    def bound(self, leaves: Mapping[str, Node]) -> BoundModel:
        return BoundModel(self.model, leaves)

    def params(self, *prefixes: str) -> Dict[str, Matrix]:
        return {name: self.model.params[name] for name in self.model.names(*prefixes)}

    def frozen(self) -> Tuple[List[Matrix], Matrix, Matrix]:
        """Embeddings, discriminator scores and quality targets at the base point."""
        base = self.model.bind()
        zs = [base.encode(x, v).value for v, x in enumerate(self.views)]
        scores = base.discriminate(zs).value
        preds = [base.classify(z).value for z in zs]
        targets = quality_targets(preds, self.labels, self.label_mask, self.view_mask)
        return zs, scores, targets


def tiny_problem(
    seed: int, n: int = 5, dims: Tuple[int, ...] = (4, 3), c: int = 3, d_e: int = 3
) -> TinyProblem:
    rng = RngStream(seed).child("gradcheck").generator()
    m = len(dims)
    config = ModelConfig(d_e=d_e, hidden=(4,), disc_hidden=4)
    model = init_model(dims, d_e, c, seed, config)
    for name in model.names("enc", "dec", "cls", "disc"):
        if "_b" in name:
            model.params[name] = 0.1 * rng.standard_normal(model.params[name].shape)
    views = [rng.standard_normal((n, d)) for d in dims]
    view_mask = (rng.random((n, m)) < 0.7).astype(float)
    view_mask[view_mask.sum(axis=1) == 0, 0] = 1.0
    label_mask = (rng.random((n, c)) < 0.8).astype(float)
    labels = (rng.random((n, c)) < 0.5).astype(float) * label_mask
    correlation = truncate_correlation(build_correlation(labels), 0.1)
    return TinyProblem(model, views, labels, label_mask, view_mask, correlation)


# =============================================================================
# CASES
# =============================================================================


@register_case("re")
def _case_re(seed: int):
    problem = tiny_problem(seed)

    def objective(leaves):
        bound = problem.bound(leaves)
        zs = [bound.encode(x, v) for v, x in enumerate(problem.views)]
        recon = [bound.decode(z, v) for v, z in enumerate(zs)]
        return loss_re(problem.views, recon, problem.view_mask)

    return objective, problem.params("enc", "dec")


@register_case("ma")
def _case_ma(seed: int):
    problem = tiny_problem(seed)

    def objective(leaves):
        bound = problem.bound(leaves)
        zs = [bound.encode(x, v) for v, x in enumerate(problem.views)]
        return loss_ma(zs, problem.view_mask)

    return objective, problem.params("enc")


@register_case("ge")
def _case_ge(seed: int):
    problem = tiny_problem(seed)
    graph, valid = label_similarity_graph(problem.labels, problem.label_mask)

    def objective(leaves):
        bound = problem.bound(leaves)
        zs = [bound.encode(x, v) for v, x in enumerate(problem.views)]
        return loss_ge(zs, graph, valid, problem.view_mask)

    return objective, problem.params("enc")


@register_case("qd")
def _case_qd(seed: int):
    problem = tiny_problem(seed)
    zs, _, targets = problem.frozen()

    def objective(leaves):
        return loss_qd(problem.bound(leaves).discriminate(zs), targets)

    return objective, problem.params("disc")


def _classification_case(seed: int, use_mcce: bool):
    problem = tiny_problem(seed)
    _, scores, _ = problem.frozen()

    def objective(leaves):
        bound = problem.bound(leaves)
        zs = [bound.encode(x, v) for v, x in enumerate(problem.views)]
        p = bound.classify(fuse(zs, scores))
        if use_mcce:
            return loss_mcce(p, problem.labels, problem.label_mask, problem.correlation)
        return loss_mbce(p, problem.labels, problem.label_mask)

    return objective, problem.params("enc", "cls")


@register_case("mbce")
def _case_mbce(seed: int):
    return _classification_case(seed, use_mcce=False)


@register_case("mcce")
def _case_mcce(seed: int):
    return _classification_case(seed, use_mcce=True)


@register_case("total")
def _case_total(seed: int):
    problem = tiny_problem(seed)
    zs_base, scores, targets = problem.frozen()
    graph, valid = label_similarity_graph(problem.labels, problem.label_mask)
    weights = LossWeights(alpha=0.5, beta=0.9, gamma=0.7, sigma=0.1)

    def objective(leaves):
        bound = problem.bound(leaves)
        zs = [bound.encode(x, v) for v, x in enumerate(problem.views)]
        recon = [bound.decode(z, v) for v, z in enumerate(zs)]
        p = bound.classify(fuse(zs, scores))
        parts = {
            "re": loss_re(problem.views, recon, problem.view_mask),
            "ma": loss_ma(zs, problem.view_mask),
            "ge": loss_ge(zs, graph, valid, problem.view_mask),
            "qd": loss_qd(bound.discriminate([const(z) for z in zs_base]), targets),
            "cls": loss_mcce(
                p, problem.labels, problem.label_mask, problem.correlation
            ),
        }
        return total_loss(parts, weights, epoch=3).objective

    return objective, dict(problem.model.params)


@register_case("toy")
def _case_toy(seed: int):
    """Quadratic with exact central differences."""
    rng = RngStream(seed).child("toy").generator()

    def objective(leaves):
        w = leaves["w"]
        return sum_all(w * w) * 0.5

    return objective, {"w": rng.uniform(0.5, 1.5, size=(2, 3))}


# =============================================================================
# RUNNER
# =============================================================================


def run_gradcheck(
    seed: int = 0,
    tol: float = 1e-4,
    step: float = 1e-5,
    cases: Optional[Iterable[str]] = None,
    instances: int = 1,
) -> Dict[str, List[GradCheckReport]]:
    """Run the selected cases on ``instances`` random instances each.

    Instance k uses seed ``seed + k``.
    """
    default = [name for name in GRADCHECK_CASES if name != "toy"]
    names = list(cases) if cases else default
    unknown = [name for name in names if name not in GRADCHECK_CASES]
    if unknown:
        raise ContractError(
            f"Unknown gradient-check cases {unknown}; "
            f"available: {sorted(GRADCHECK_CASES)}"
        )
    results: Dict[str, List[GradCheckReport]] = {}
    for name in names:
        results[name] = []
        for offset in range(instances):
            objective, params = GRADCHECK_CASES[name](seed + offset)
            report = grad_check(objective, params, step=step, tol=tol)
            results[name].append(report)
            level = logging.INFO if report.passed else logging.WARNING
            logger.log(
                level,
                f"{name} (seed {seed + offset}): "
                f"max rel error {report.max_rel_error:.3e}",
            )
    return results


def summarize(results: Dict[str, List[GradCheckReport]]) -> Dict[str, Dict]:
    """JSON-ready summary: worst error and pass flag per case."""
    summary = {}
    for name, reports in results.items():
        worst = max(reports, key=lambda r: r.max_rel_error)
        summary[name] = {
            "instances": len(reports),
            "max_rel_error": worst.max_rel_error,
            "worst_parameter": worst.worst_parameter,
            "passed": all(r.passed for r in reports),
        }
    return summary


def all_passed(results: Dict[str, List[GradCheckReport]]) -> bool:
    return all(report.passed for reports in results.values() for report in reports)
