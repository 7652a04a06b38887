"""Mini-batch training with momentum SGD, validation snapshots and history."""

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .dataset import MultiViewDataset, correlation_for, label_similarity_graph
from .errors import (
    ArtifactIOError,
    ContractError,
    TrainingDivergedError,
    UndefinedMetricError,
)
from .losses import (
    LossBreakdown,
    LossWeights,
    fuse,
    fuse_baseline,
    fuse_static,
    loss_ge,
    loss_ma,
    loss_mbce,
    loss_mcce,
    loss_qd,
    loss_re,
    quality_targets,
    total_loss,
)
from .metrics import average_precision
from .model import (
    FUSION_MODES,
    BoundModel,
    ForwardBundle,
    ModelConfig,
    RankModel,
    init_model,
)
from .ndcore import Matrix, RngStream, detach
from .utils import FLOAT_FORMAT, _raise_if_errors, _validate_positive_int

logger = logging.getLogger(__name__)

ABLATION_PRESETS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "backbone": {"use_re": False, "use_ma": False, "use_ge": False},
    "backbone+re": {"use_ma": False, "use_ge": False},
    "backbone+ma": {"use_re": False, "use_ge": False},
    "backbone+ge": {"use_re": False, "use_ma": False},
    "no-re": {"use_re": False},
    "no-ma": {"use_ma": False},
    "no-ge": {"use_ge": False},
    "no-discriminator": {"use_discriminator": False},
    "no-mcce": {"use_mcce": False},
    "no-mcce-no-discriminator": {"use_mcce": False, "use_discriminator": False},
}


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings, loss weights and ablation switches.

    With ``use_discriminator`` off, embeddings are fused by ``fusion``
    (``baseline`` mask-weighted average or ``static`` fixed weights).
    ``use_qd`` drops only the discriminator's own loss.
    """

    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 200
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    use_re: bool = True
    use_ma: bool = True
    use_ge: bool = True
    use_discriminator: bool = True
    use_mcce: bool = True
    use_qd: bool = True
    fusion: str = "dynamic"
    static_weights: Optional[Tuple[float, ...]] = None
    eval_every: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        errors = [
            _validate_positive_int(self.batch_size, "batch_size"),
            _validate_positive_int(self.eval_every, "eval_every"),
        ]
        if not self.learning_rate > 0:
            errors.append(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0.0 <= self.momentum < 1.0:
            errors.append(f"momentum must lie in [0, 1), got {self.momentum}")
        epochs = self.epochs
        if isinstance(epochs, bool) or not isinstance(epochs, int) or epochs < 0:
            errors.append(f"epochs must be a non-negative integer, got {epochs!r}")
        if self.fusion not in FUSION_MODES:
            errors.append(f"fusion must be one of {FUSION_MODES}, got '{self.fusion}'")
        elif self.use_discriminator and self.fusion != "dynamic":
            errors.append(f"fusion '{self.fusion}' conflicts with use_discriminator")
        elif not self.use_discriminator and self.fusion == "dynamic":
            errors.append("dynamic fusion needs the discriminator")
        if self.fusion == "static" and self.static_weights is None:
            errors.append("static fusion needs static_weights")
        _raise_if_errors(errors)

    @classmethod
    def from_preset(cls, preset: str, **overrides) -> "TrainConfig":
        """Build a config from a named ablation plus field overrides."""
        if preset not in ABLATION_PRESETS:
            choices = sorted(ABLATION_PRESETS)
            raise ContractError(f"Unknown ablation '{preset}'; choose from {choices}")
        flags = dict(ABLATION_PRESETS[preset])
        conflicts = sorted(
            k for k in flags if k in overrides and overrides[k] != flags[k]
        )
        if conflicts:
            clash = ", ".join(conflicts)
            raise ContractError(f"Ablation '{preset}' conflicts with {clash}")
        flags.update(overrides)
        dynamic = flags.get("fusion", "dynamic") == "dynamic"
        if not flags.get("use_discriminator", True) and dynamic:
            flags["fusion"] = "baseline"
        return cls(**flags)

    @property
    def classification(self) -> str:
        return "mcce" if self.use_mcce else "mbce"

    def to_dict(self) -> Dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "weights":
                value = {k.name: getattr(value, k.name) for k in fields(value)}
            elif f.name == "model":
                value = {
                    "d_e": value.d_e,
                    "hidden": list(value.hidden),
                    "disc_hidden": value.disc_hidden,
                }
            elif isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out


@dataclass
class TrainState:
    model: RankModel
    velocity: Dict[str, Matrix]
    epoch: int = 0
    history: List[Dict[str, float]] = field(default_factory=list)
    best_model: Optional[RankModel] = None
    best_ap: float = -np.inf
    best_epoch: int = 0

    @classmethod
    def initial(cls, model: RankModel) -> "TrainState":
        velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
        return cls(model=model, velocity=velocity)


@dataclass
class FitResult:
    final: RankModel
    best: RankModel
    history: List[Dict[str, float]]
    best_epoch: int = 0

    def frame(self) -> pd.DataFrame:
        return history_frame(self.history)


class MomentumSGD:
    """Classical momentum: v <- mu * v - lr * g, then theta <- theta + v."""

    def __init__(self, learning_rate: float, momentum: float):
        self.learning_rate = learning_rate
        self.momentum = momentum

    def step(
        self,
        params: Dict[str, Matrix],
        grads: Dict[str, Matrix],
        velocity: Dict[str, Matrix],
    ) -> None:
        for name, grad in grads.items():
            v = self.momentum * velocity[name] - self.learning_rate * grad
            velocity[name] = v
            params[name] = params[name] + v


# =============================================================================
# FORWARD PASS AND BATCH OBJECTIVE
# =============================================================================


def forward(
    model: Union[RankModel, BoundModel],
    views: Sequence[Matrix],
    view_mask: Matrix,
    fusion: str = "dynamic",
    static_weights: Optional[Sequence[float]] = None,
    decode: bool = False,
) -> ForwardBundle:
    """Encode every view, fuse, and classify the fused and per-view embeddings."""
    bound = model if isinstance(model, BoundModel) else model.bind()
    zs = [bound.encode(x, v) for v, x in enumerate(views)]
    recon = [bound.decode(z, v) for v, z in enumerate(zs)] if decode else []
    b = None
    if fusion == "dynamic":
        b = bound.discriminate([detach(z) for z in zs])
        z_bar = fuse(zs, b)
    elif fusion == "baseline":
        z_bar = fuse_baseline(zs, view_mask)
    elif fusion == "static":
        z_bar = fuse_static(zs, static_weights)
    else:
        raise ContractError(f"Unknown fusion mode '{fusion}'")
    return ForwardBundle(
        z=zs,
        recon=recon,
        b=b,
        z_bar=z_bar,
        p=bound.classify(z_bar),
        p_views=[bound.classify(detach(z)) for z in zs],
    )


def batch_loss(
    model: Union[RankModel, BoundModel],
    batch: MultiViewDataset,
    correlation: Matrix,
    cfg: TrainConfig,
    epoch: int,
) -> LossBreakdown:
    """Composite objective of one batch; depends only on the batch rows."""
    bound = model if isinstance(model, BoundModel) else model.bind()
    w, y, g = batch.view_mask, batch.labels, batch.label_mask
    bundle = forward(
        bound, batch.views, w, cfg.fusion, cfg.static_weights, decode=cfg.use_re
    )

    parts = {}
    if cfg.use_re:
        parts["re"] = loss_re(batch.views, bundle.recon, w)
    if cfg.use_ma:
        parts["ma"] = loss_ma(bundle.z, w)
    if cfg.use_ge:
        graph, valid = label_similarity_graph(y, g)
        parts["ge"] = loss_ge(bundle.z, graph, valid, w)
    if cfg.use_discriminator and cfg.use_qd:
        targets = quality_targets([p.value for p in bundle.p_views], y, g, w)
        parts["qd"] = loss_qd(bundle.b, targets)
    if cfg.use_mcce:
        parts["cls"] = loss_mcce(bundle.p, y, g, correlation)
    else:
        parts["cls"] = loss_mbce(bundle.p, y, g)
    return total_loss(parts, cfg.weights, epoch, cfg.classification)


# =============================================================================
# TRAINING LOOP
# =============================================================================


def train_epoch(
    state: TrainState,
    dataset: MultiViewDataset,
    cfg: TrainConfig,
    correlation: Optional[Matrix] = None,
) -> TrainState:
    """Run one shuffled pass over the training rows.

    The mean losses of the pass are appended to the history.
    """
    train = dataset.rows("train")
    if len(train) == 0:
        raise ContractError("Cannot train: training split is empty")
    if correlation is None:
        correlation = correlation_for(dataset, cfg.weights.sigma).truncated
    epoch = state.epoch + 1
    rng = RngStream(cfg.seed).child("shuffle").child(str(epoch)).generator()
    order = train[rng.permutation(len(train))]
    optimizer = MomentumSGD(cfg.learning_rate, cfg.momentum)

    sums: Dict[str, float] = {}
    for index, start in enumerate(range(0, len(order), cfg.batch_size)):
        rows = order[start : start + cfg.batch_size]
        bound = state.model.bind()
        breakdown = batch_loss(bound, dataset.subset(rows), correlation, cfg, epoch)
        if not breakdown.is_finite():
            raise TrainingDivergedError(
                f"Non-finite loss at epoch {epoch}, batch {index}: "
                f"{breakdown.to_dict()}"
            )
        breakdown.objective.backward()
        optimizer.step(state.model.params, bound.gradients(), state.velocity)
        for key, value in breakdown.to_dict().items():
            sums[key] = sums.get(key, 0.0) + value * len(rows)
        logger.debug(f"epoch {epoch} batch {index}: total {breakdown.l_total:.6f}")

    record = {"epoch": epoch}
    record.update({key: value / len(order) for key, value in sums.items()})
    record["ma_coefficient"] = cfg.weights.ma_coefficient(epoch)
    state.epoch = epoch
    state.history.append(record)
    logger.info(f"epoch {epoch}: total loss {record['l_total']:.6f}")
    return state


def fit(dataset: MultiViewDataset, cfg: TrainConfig) -> FitResult:
    """Train for ``cfg.epochs`` epochs, keeping the best validation-AP snapshot."""
    model = init_model(dataset.dims, cfg.model.d_e, dataset.c, cfg.seed, cfg.model)
    state = TrainState.initial(model)
    if cfg.epochs == 0:
        return FitResult(final=model, best=model.copy(), history=[])

    correlation = correlation_for(dataset, cfg.weights.sigma).truncated
    val = dataset.rows("val")
    if len(val) == 0:
        logger.warning(
            "Validation split is empty; the final model doubles as the best snapshot"
        )

    for _ in range(cfg.epochs):
        train_epoch(state, dataset, cfg, correlation)
        due = state.epoch % cfg.eval_every == 0 or state.epoch == cfg.epochs
        if len(val) and due:
            scores = predict(
                state.model, dataset, "val", cfg.fusion, cfg.static_weights
            )
            try:
                val_ap = average_precision(scores, dataset.labels[val])
            except UndefinedMetricError as e:
                logger.warning(f"Skipping validation at epoch {state.epoch}: {e}")
                continue
            state.history[-1]["val_ap"] = val_ap
            if val_ap > state.best_ap:
                state.best_ap, state.best_epoch = val_ap, state.epoch
                state.best_model = state.model.copy()

    best = state.best_model or state.model.copy()
    best_epoch = state.best_epoch if state.best_model is not None else state.epoch
    logger.info(
        f"Training done after {state.epoch} epochs; "
        f"best validation AP at epoch {best_epoch}"
    )
    return FitResult(
        final=state.model, best=best, history=state.history, best_epoch=best_epoch
    )


# =============================================================================
# INFERENCE
# =============================================================================


def predict(
    model: RankModel,
    dataset: MultiViewDataset,
    split: str = "test",
    fusion: str = "dynamic",
    static_weights: Optional[Sequence[float]] = None,
) -> Matrix:
    """Label probabilities for the rows of ``split``."""
    model.check_compatible(dataset.dims, dataset.c)
    rows = dataset.rows(split)
    views = [x[rows] for x in dataset.views]
    bundle = forward(model, views, dataset.view_mask[rows], fusion, static_weights)
    return bundle.p.value


def discriminator_weights(
    model: RankModel, dataset: MultiViewDataset, split: str = "test"
) -> Matrix:
    """Discriminator scores B (rows x views) for the rows of ``split``."""
    model.check_compatible(dataset.dims, dataset.c)
    rows = dataset.rows(split)
    bound = model.bind()
    zs = [bound.encode(x[rows], v) for v, x in enumerate(dataset.views)]
    return bound.discriminate(zs).value


def history_frame(history: List[Dict[str, float]]) -> pd.DataFrame:
    frame = pd.DataFrame(history)
    if "epoch" in frame.columns:
        frame = frame[["epoch"] + [c for c in frame.columns if c != "epoch"]]
    return frame


def write_history(history: List[Dict[str, float]], path: Union[str, Path]) -> Path:
    """Write per-epoch losses and validation scores as CSV."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        history_frame(history).to_csv(path, index=False, float_format=FLOAT_FORMAT)
    except OSError as e:
        raise ArtifactIOError(path, "cannot write history", e)
    return path
