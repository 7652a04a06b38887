"""Gradient checks of every training loss against central finite differences."""

import pytest

from rankmvml.errors import ContractError
from rankmvml.gradcheck import (
    GRADCHECK_CASES,
    all_passed,
    run_gradcheck,
    summarize,
    tiny_problem,
)
from rankmvml.ndcore import grad_check

LOSS_CASES = sorted(name for name in GRADCHECK_CASES if name != "toy")


def test_every_loss_has_a_case():
    assert set(LOSS_CASES) == {"re", "ma", "ge", "qd", "mbce", "mcce", "total"}


@pytest.mark.parametrize("name", LOSS_CASES)
@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients_match_finite_differences(name, seed):
    objective, params = GRADCHECK_CASES[name](seed)
    report = grad_check(objective, params, step=1e-5, tol=1e-4)
    assert report.passed, (
        f"{name} seed {seed}: {report.max_rel_error:.3e} at {report.worst_parameter}"
    )


def test_toy_case_is_exact():
    results = run_gradcheck(seed=0, tol=1e-9, cases=["toy"], instances=3)
    assert all_passed(results)


def test_tiny_problem_shapes():
    problem = tiny_problem(4)
    assert [x.shape for x in problem.views] == [(5, 4), (5, 3)]
    assert problem.labels.shape == problem.label_mask.shape == (5, 3)
    assert (problem.view_mask.sum(axis=1) >= 1).all()
    assert (problem.labels * (1 - problem.label_mask) == 0).all()


def test_run_gradcheck_summary():
    results = run_gradcheck(seed=1, cases=["re", "mcce"], instances=2)
    summary = summarize(results)
    assert sorted(summary) == ["mcce", "re"]
    assert summary["re"]["instances"] == 2
    assert summary["mcce"]["passed"]
    assert summary["re"]["max_rel_error"] < 1e-4


def test_run_gradcheck_rejects_unknown_case():
    with pytest.raises(ContractError, match="hsic"):
        run_gradcheck(cases=["hsic"])
