"""Command-line interface of rankmvml.

Commands: ``synth``, ``inject``, ``train``, ``eval``, ``gradcheck``, ``correlation``.
"""

import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import click

from . import __version__
from .dataset import (
    InjectionConfig,
    build_correlation,
    export_correlation_csv,
    inject_missing,
    load_dataset,
    save_dataset,
    synth_dataset,
    truncate_correlation,
)
from .errors import ArtifactIOError, ContractError
from .gradcheck import GRADCHECK_CASES, all_passed, run_gradcheck, summarize
from .losses import LossWeights
from .metrics import evaluate, write_metrics_json
from .model import ModelConfig, load_checkpoint, load_fusion
from .runner import ExperimentConfig, RepeatRunner
from .trainer import ABLATION_PRESETS, TrainConfig, predict
from .utils import (
    EXIT_OK,
    EXIT_VALIDATION,
    _handle_command_errors,
    parse_int_list,
    write_json,
)

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class RankGroup(click.Group):
    """Click group whose usage errors exit with 1, keeping 2 for I/O failures."""

    def main(self, args=None, prog_name=None, **extra):
        extra.pop("standalone_mode", None)
        try:
            rv = super().main(
                args=args, prog_name=prog_name, standalone_mode=False, **extra
            )
        except click.ClickException as e:
            e.show()
            sys.exit(EXIT_VALIDATION)
        except click.exceptions.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_VALIDATION)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def _seed_option(func):
    return click.option(
        "--seed", type=int, default=0, show_default=True, help="Random seed."
    )(func)


def _float_list(text: Optional[str], name: str) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ContractError(
            f"{name} must be a comma-separated list of numbers, got {text!r}"
        )


@click.group(cls=RankGroup)
@click.version_option(__version__, prog_name="rankmvml")
@click.option(
    "--log-level",
    type=click.Choice(LOG_LEVELS, case_sensitive=False),
    default="INFO",
    show_default=True,
    envvar="RANKMVML_LOG_LEVEL",
    help="Logging verbosity (stderr only).",
)
def cli(log_level: str):
    """Incomplete multi-view multi-label learning experiments."""
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        stream=sys.stderr,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        force=True,
    )


# =============================================================================
# DATA COMMANDS
# =============================================================================


@cli.command()
@click.option(
    "--n",
    "n",
    type=int,
    default=200,
    show_default=True,
    help="Number of samples.",
)
@click.option(
    "--views",
    type=int,
    default=2,
    show_default=True,
    help="Number of views m.",
)
@click.option(
    "--classes",
    type=int,
    default=4,
    show_default=True,
    help="Number of labels c.",
)
@click.option(
    "--dims",
    default=None,
    help="Per-view widths, e.g. '16,24'. Default max(2c, 16).",
)
@click.option(
    "--noise",
    type=float,
    default=0.1,
    show_default=True,
    help="Gaussian noise std per view.",
)
@_seed_option
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    required=True,
    help="Dataset directory to write.",
)
@_handle_command_errors("synthesize dataset")
def synth(
    n: int,
    views: int,
    classes: int,
    dims: Optional[str],
    noise: float,
    seed: int,
    out: Path,
):
    """Write a complete synthetic dataset."""
    widths = parse_int_list(dims, "--dims")
    ds = synth_dataset(n, views, classes, dims=widths, noise=noise, seed=seed)
    save_dataset(ds, out)
    click.echo(f"Wrote dataset n={ds.n} m={ds.m} c={ds.c} to {out}")


@cli.command()
@click.option(
    "--data",
    type=click.Path(path_type=Path),
    required=True,
    help="Complete dataset directory.",
)
@click.option(
    "--view-missing",
    type=float,
    default=0.5,
    show_default=True,
    help="Missing-view rate per view.",
)
@click.option(
    "--label-missing",
    type=float,
    default=0.5,
    show_default=True,
    help="Missing-label rate on train rows.",
)
@_seed_option
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    required=True,
    help="Directory for the degraded dataset.",
)
@_handle_command_errors("inject missing data")
def inject(data: Path, view_missing: float, label_missing: float, seed: int, out: Path):
    """Hide views and training labels of a complete dataset."""
    ds = load_dataset(data)
    degraded = inject_missing(ds, InjectionConfig(view_missing, label_missing, seed))
    save_dataset(degraded, out)
    density = degraded.view_mask.mean()
    click.echo(f"Wrote degraded dataset to {out} (W density {density:.3f})")


@cli.command()
@click.option(
    "--data",
    type=click.Path(path_type=Path),
    required=True,
    help="Dataset directory.",
)
@click.option(
    "--sigma",
    type=float,
    default=None,
    help="Truncate entries <= sigma (omit for the raw matrix).",
)
@click.option(
    "--labels",
    "label_subset",
    default=None,
    help="Label subset, e.g. '0-9' or '1,4,7'.",
)
@_seed_option
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    required=True,
    help="CSV file to write.",
)
@_handle_command_errors("export label correlation")
def correlation(
    data: Path,
    sigma: Optional[float],
    label_subset: Optional[str],
    seed: int,
    out: Path,
):
    """Export the label correlation matrix built from training labels."""
    ds = load_dataset(data)
    train = ds.rows("train")
    if len(train) == 0:
        raise ContractError("Cannot build label correlation: training split is empty")
    corr = build_correlation(ds.labels[train], ds.label_mask[train])
    if sigma is not None:
        corr = truncate_correlation(corr, sigma)
    export_correlation_csv(corr, out, parse_int_list(label_subset, "--labels"))
    click.echo(f"Wrote correlation matrix to {out}")


# =============================================================================
# TRAINING AND EVALUATION
# =============================================================================


def _resolve_seeds(seed: int, repeat: Optional[int], seeds: Optional[str]) -> List[int]:
    explicit = parse_int_list(seeds, "--seeds")
    if explicit is not None:
        if repeat is not None and repeat != len(explicit):
            raise ContractError(
                f"--repeat {repeat} disagrees with {len(explicit)} --seeds"
            )
        return explicit
    count = 1 if repeat is None else repeat
    if count < 1:
        raise ContractError(f"--repeat must be at least 1, got {count}")
    return [seed + k for k in range(count)]


@cli.command()
@click.option(
    "--data",
    type=click.Path(path_type=Path),
    required=True,
    help="Dataset directory.",
)
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--lr", type=float, default=0.1, show_default=True, help="Learning rate.")
@click.option("--momentum", type=float, default=0.9, show_default=True)
@click.option("--batch-size", type=int, default=128, show_default=True)
@click.option(
    "--alpha",
    type=float,
    default=0.1,
    show_default=True,
    help="Weight of the graph embedding loss.",
)
@click.option(
    "--beta",
    type=float,
    default=0.97,
    show_default=True,
    help="Aggregation schedule base (1 - beta^t).",
)
@click.option(
    "--gamma",
    type=float,
    default=0.1,
    show_default=True,
    help="Weight of the reconstruction loss.",
)
@click.option(
    "--sigma",
    type=float,
    default=0.1,
    show_default=True,
    help="Correlation truncation threshold.",
)
@click.option(
    "--d-e",
    "d_e",
    type=int,
    default=128,
    show_default=True,
    help="Embedding width.",
)
@click.option(
    "--hidden",
    default="512,256",
    show_default=True,
    help="Encoder hidden widths.",
)
@click.option(
    "--disc-hidden",
    type=int,
    default=None,
    help="Discriminator hidden width (default max(64, m*d_e/4)).",
)
@click.option(
    "--ablate",
    type=click.Choice(sorted(ABLATION_PRESETS)),
    default="full",
    show_default=True,
)
@click.option(
    "--use-discriminator/--no-use-discriminator",
    default=None,
    help="Override the preset's discriminator switch.",
)
@click.option(
    "--use-qd/--no-use-qd",
    default=None,
    help="Keep or drop the discriminator loss.",
)
@click.option(
    "--fusion",
    type=click.Choice(["baseline", "static"]),
    default=None,
    help="Fusion without the discriminator.",
)
@click.option(
    "--static-weights",
    default=None,
    help="Per-view weights for static fusion, e.g. '0.7,0.3'.",
)
@click.option(
    "--eval-every",
    type=int,
    default=1,
    show_default=True,
    help="Epochs between validation passes.",
)
@click.option(
    "--view-missing",
    type=float,
    default=None,
    help="Inject missing views per seed (dataset must be complete).",
)
@click.option(
    "--label-missing",
    type=float,
    default=None,
    help="Inject missing labels per seed.",
)
@click.option(
    "--repeat",
    type=int,
    default=None,
    help="Number of seeded repeats (seeds seed, seed+1, ...).",
)
@click.option("--seeds", default=None, help="Explicit seed list, e.g. '1,2,3'.")
@click.option(
    "--workers",
    type=int,
    default=1,
    show_default=True,
    help="Worker processes for repeats.",
)
@click.option(
    "--split",
    type=click.Choice(["val", "test"]),
    default="test",
    show_default=True,
)
@_seed_option
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    required=True,
    help="Run directory.",
)
@_handle_command_errors("train")
def train(
    data: Path,
    epochs: int,
    lr: float,
    momentum: float,
    batch_size: int,
    alpha: float,
    beta: float,
    gamma: float,
    sigma: float,
    d_e: int,
    hidden: str,
    disc_hidden: Optional[int],
    ablate: str,
    use_discriminator: Optional[bool],
    use_qd: Optional[bool],
    fusion: Optional[str],
    static_weights: Optional[str],
    eval_every: int,
    view_missing: Optional[float],
    label_missing: Optional[float],
    repeat: Optional[int],
    seeds: Optional[str],
    workers: int,
    split: str,
    seed: int,
    out: Path,
):
    """Train (and evaluate) the model, once or over several seeds."""
    if not (data / "manifest.json").is_file():
        raise ArtifactIOError(data / "manifest.json", "dataset manifest not found")
    overrides = {}
    if use_discriminator is not None:
        overrides["use_discriminator"] = use_discriminator
    if use_qd is not None:
        overrides["use_qd"] = use_qd
    if fusion is not None:
        overrides["fusion"] = fusion
    weights = _float_list(static_weights, "--static-weights")
    if weights is not None:
        overrides["static_weights"] = tuple(weights)
    cfg = TrainConfig.from_preset(
        ablate,
        learning_rate=lr,
        momentum=momentum,
        batch_size=batch_size,
        epochs=epochs,
        weights=LossWeights(alpha=alpha, beta=beta, gamma=gamma, sigma=sigma),
        seed=seed,
        eval_every=eval_every,
        model=ModelConfig(
            d_e=d_e,
            hidden=tuple(parse_int_list(hidden, "--hidden") or ()),
            disc_hidden=disc_hidden,
        ),
        **overrides,
    )
    injection = None
    if view_missing is not None or label_missing is not None:
        injection = InjectionConfig(view_missing or 0.0, label_missing or 0.0)
    experiment = ExperimentConfig(
        dataset_dir=data,
        train=cfg,
        out=out,
        seeds=_resolve_seeds(seed, repeat, seeds),
        injection=injection,
        eval_split=split,
    )
    summary = RepeatRunner(experiment, workers=workers).run_and_aggregate()
    click.echo(
        f"Runs: {summary['processed']} processed, "
        f"{summary['succeeded']} succeeded, {summary['failed']} failed"
    )
    if "mean" in summary:
        click.echo(f"Mean {split} AP: {summary['mean']['ap']}")
    if summary["failed"]:
        for failed_seed, error in summary.get("errors", {}).items():
            click.echo(f"error: seed {failed_seed}: {error}", err=True)
        raise click.exceptions.Exit(EXIT_VALIDATION)


@cli.command(name="eval")
@click.option(
    "--checkpoint",
    type=click.Path(path_type=Path),
    required=True,
    help="Checkpoint directory.",
)
@click.option(
    "--data",
    type=click.Path(path_type=Path),
    required=True,
    help="Dataset directory.",
)
@click.option(
    "--split",
    type=click.Choice(["train", "val", "test"]),
    default="test",
    show_default=True,
)
@click.option(
    "--fusion",
    type=click.Choice(["dynamic", "baseline", "static"]),
    default=None,
    help="Fusion mode (default: the one stored with the checkpoint).",
)
@click.option(
    "--static-weights",
    default=None,
    help="Per-view weights for static fusion (default: stored).",
)
@click.option(
    "--threshold",
    type=float,
    default=0.5,
    show_default=True,
    help="Decision threshold for HL.",
)
@_seed_option
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    required=True,
    help="metrics.json path to write.",
)
@_handle_command_errors("evaluate")
def eval_command(
    checkpoint: Path,
    data: Path,
    split: str,
    fusion: Optional[str],
    static_weights: Optional[str],
    threshold: float,
    seed: int,
    out: Path,
):
    """Compute the six metrics of a checkpoint on one split."""
    model, epoch = load_checkpoint(checkpoint)
    ds = load_dataset(data)
    stored_fusion, stored_weights = load_fusion(checkpoint)
    weights = _float_list(static_weights, "--static-weights")
    if fusion is None:
        fusion = stored_fusion
        weights = weights if weights is not None else stored_weights
    scores = predict(model, ds, split, fusion, weights)
    report = evaluate(scores, ds.labels[ds.rows(split)], threshold)
    write_metrics_json(report, out, split=split, epoch=epoch)
    click.echo(f"{split}: AP {report.ap} over {report.n_eval} samples")


# =============================================================================
# DIAGNOSTICS
# =============================================================================


@cli.command()
@click.option(
    "--tol",
    type=float,
    default=1e-4,
    show_default=True,
    help="Relative error tolerance.",
)
@click.option(
    "--step",
    type=float,
    default=1e-5,
    show_default=True,
    help="Finite-difference step.",
)
@click.option(
    "--instances",
    type=int,
    default=1,
    show_default=True,
    help="Random instances per case.",
)
@click.option(
    "--case",
    "cases",
    multiple=True,
    help="Case to run (repeatable); default all losses.",
)
@_seed_option
@click.option(
    "--out",
    type=click.Path(path_type=Path),
    default=None,
    help="Optional JSON report path.",
)
@_handle_command_errors("run gradient check")
def gradcheck(
    tol: float,
    step: float,
    instances: int,
    cases: Sequence[str],
    seed: int,
    out: Optional[Path],
):
    """Compare backward gradients of every loss with finite differences."""
    unknown = [c for c in cases if c not in GRADCHECK_CASES]
    if unknown:
        available = ", ".join(sorted(GRADCHECK_CASES))
        raise ContractError(f"Unknown cases {unknown}; available: {available}")
    results = run_gradcheck(
        seed=seed, tol=tol, step=step, cases=cases or None, instances=instances
    )
    summary = summarize(results)
    for name, entry in summary.items():
        status = "ok" if entry["passed"] else "FAIL"
        click.echo(f"{name:8s} {status:4s} max rel error {entry['max_rel_error']:.3e}")
    if out is not None:
        write_json({"tol": tol, "step": step, "seed": seed, "cases": summary}, out)
    if not all_passed(results):
        raise click.exceptions.Exit(EXIT_VALIDATION)


def main():
    """Console-script entry point."""
    cli()


if __name__ == "__main__":
    main()
