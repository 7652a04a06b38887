"""Repeated training runs over several seeds, optionally in worker processes."""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from .dataset import InjectionConfig, inject_missing, load_dataset
from .errors import ContractError
from .metrics import METRIC_NAMES, evaluate, write_metrics_json
from .model import save_checkpoint
from .trainer import TrainConfig, fit, predict, write_history
from .utils import FLOAT_FORMAT, write_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ExperimentConfig:
    """A dataset, how to degrade it, how to train on it, and which seeds to repeat with.

    With ``injection`` set, the dataset must be complete and every seed
    draws its own missing views and labels.
    """

    dataset_dir: Path
    train: TrainConfig
    out: Path
    seeds: Sequence[int] = (0,)
    injection: Optional[InjectionConfig] = None
    eval_split: str = "test"

    def __post_init__(self):
        object.__setattr__(self, "dataset_dir", Path(self.dataset_dir))
        object.__setattr__(self, "out", Path(self.out))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.seeds:
            raise ContractError("At least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ContractError(f"Seeds must be distinct, got {list(self.seeds)}")

    @property
    def repeats(self) -> int:
        return len(self.seeds)

    def run_dir(self, seed: int) -> Path:
        return self.out if self.repeats == 1 else self.out / f"seed_{seed}"


@dataclass
class RunResult:
    """Outcome of one seeded run."""

    seed: int
    success: bool
    run_dir: Path
    metrics: Dict[str, Optional[float]] = field(default_factory=dict)
    best_epoch: int = 0
    error: Optional[str] = None


def execute_run(experiment: ExperimentConfig, seed: int) -> RunResult:
    """Train and evaluate one seed, writing its artifacts into its run directory."""
    run_dir = experiment.run_dir(seed)
    try:
        dataset = load_dataset(experiment.dataset_dir)
        if experiment.injection is not None:
            dataset = inject_missing(dataset, replace(experiment.injection, seed=seed))
        cfg = replace(experiment.train, seed=seed)
        result = fit(dataset, cfg)

        fusion = (cfg.fusion, cfg.static_weights)
        save_checkpoint(result.best, run_dir / "checkpoint", result.best_epoch, *fusion)
        save_checkpoint(result.final, run_dir / "final", len(result.history), *fusion)
        write_history(result.history, run_dir / "history.csv")
        write_json(cfg.to_dict(), run_dir / "config.json")

        split = experiment.eval_split
        scores = predict(result.best, dataset, split, *fusion)
        report = evaluate(scores, dataset.labels[dataset.rows(split)])
        write_metrics_json(report, run_dir / "metrics.json", split=split, seed=seed)
        logger.info(f"Run seed {seed} finished: AP {report.ap}")
        return RunResult(seed, True, run_dir, report.values(), result.best_epoch)
    except Exception as e:
        logger.error(f"Run seed {seed} failed: {e}")
        return RunResult(seed, False, run_dir, error=f"{type(e).__name__}: {e}")


class RepeatRunner:
    """Runs every seed of an experiment and aggregates the results."""

    def __init__(self, experiment: ExperimentConfig, workers: int = 1):
        if workers < 1:
            raise ContractError(f"workers must be at least 1, got {workers}")
        self.experiment = experiment
        self.workers = workers

    def run(self) -> List[RunResult]:
        seeds = list(self.experiment.seeds)
        if self.workers == 1 or len(seeds) == 1:
            return [execute_run(self.experiment, seed) for seed in seeds]
        logger.info(f"Running {len(seeds)} seeds on {self.workers} worker processes")
        with ProcessPoolExecutor(max_workers=min(self.workers, len(seeds))) as pool:
            return list(pool.map(execute_run, [self.experiment] * len(seeds), seeds))

    def run_and_aggregate(self) -> Dict[str, Any]:
        results = self.run()
        summary = aggregate(results)
        if self.experiment.repeats > 1:
            write_json(summary, self.experiment.out / "metrics.json")
            runs_frame(results).to_csv(
                self.experiment.out / "runs.csv", index=False, float_format=FLOAT_FORMAT
            )
        return summary


def runs_frame(results: Sequence[RunResult]) -> pd.DataFrame:
    records = []
    for r in results:
        record = {"seed": r.seed, "success": r.success, "best_epoch": r.best_epoch}
        record.update({name: r.metrics.get(name) for name in METRIC_NAMES})
        records.append(record)
    columns = ["seed", "success", "best_epoch", *METRIC_NAMES]
    return pd.DataFrame(records, columns=columns)


def _clean(value: float) -> Optional[float]:
    return None if value is None or math.isnan(value) else float(value)


def aggregate(results: Sequence[RunResult]) -> Dict[str, Any]:
    """Mean and sample standard deviation of every metric over the successful runs."""
    succeeded = [r for r in results if r.success]
    summary: Dict[str, Any] = {
        "processed": len(results),
        "succeeded": len(succeeded),
        "failed": len(results) - len(succeeded),
        "seeds": [r.seed for r in results],
    }
    if succeeded:
        frame = runs_frame(succeeded)[list(METRIC_NAMES)].astype(float)
        summary["mean"] = {name: _clean(frame[name].mean()) for name in METRIC_NAMES}
        summary["std"] = {
            name: _clean(frame[name].std(ddof=1)) for name in METRIC_NAMES
        }
    errors = {str(r.seed): r.error for r in results if not r.success}
    if errors:
        summary["errors"] = errors
    return summary
