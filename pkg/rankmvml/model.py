"""Encoders, decoders, classifier and quality discriminator."""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, ManifestError
from .ndcore import (
    Matrix,
    Node,
    RngStream,
    collect_gradients,
    concat_cols,
    const,
    matmul,
    relu,
    sigmoid,
    softmax_rows,
)
from .utils import read_json, read_matrix_csv, write_json, write_matrix_csv

logger = logging.getLogger(__name__)

OUTPUT_ACTIVATIONS = ("none", "sigmoid", "softmax")
FUSION_MODES = ("dynamic", "baseline", "static")


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected stack: relu between layers, optional output head."""

    widths: Tuple[int, ...]
    output_activation: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ContractError(
                f"MLP needs at least one layer, got widths {self.widths}"
            )
        if any(w < 1 for w in self.widths):
            raise ContractError(f"MLP widths must be positive, got {self.widths}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ContractError(f"Unknown output activation '{self.output_activation}'")

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def layers(self) -> List[Tuple[int, int]]:
        """(fan_in, fan_out) of every layer."""
        return list(zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self) -> Dict:
        return {
            "widths": list(self.widths),
            "output_activation": self.output_activation,
        }


@dataclass(frozen=True)
class ModelConfig:
    """Architecture choices. Encoders are [d_v, *hidden, d_e]; decoders mirror them."""

    d_e: int = 128
    hidden: Tuple[int, ...] = (512, 256)
    disc_hidden: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d_e < 1 or any(h < 1 for h in self.hidden):
            raise ContractError(
                f"Widths must be positive (d_e={self.d_e}, hidden={self.hidden})"
            )
        if self.disc_hidden is not None and self.disc_hidden < 1:
            raise ContractError(f"disc_hidden must be positive, got {self.disc_hidden}")

    def discriminator_width(self, m: int) -> int:
        if self.disc_hidden is not None:
            return self.disc_hidden
        return max(64, m * self.d_e // 4)


@dataclass
class RankModel:
    """All network parameters, stored as plain float64 matrices keyed by name.

    Names follow ``enc{v}_w{l}``, ``enc{v}_b{l}``, ``dec{v}_...``, ``cls_...`` and
    ``disc_...``; biases are 1 x width rows.
    """

    dims: List[int]
    d_e: int
    c: int
    seed: int
    encoders: List[MlpSpec]
    decoders: List[MlpSpec]
    classifier: MlpSpec
    discriminator: MlpSpec
    params: Dict[str, Matrix] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.dims)

    def specs(self) -> Dict[str, MlpSpec]:
        named = {f"enc{v}": spec for v, spec in enumerate(self.encoders)}
        named.update({f"dec{v}": spec for v, spec in enumerate(self.decoders)})
        named["cls"] = self.classifier
        named["disc"] = self.discriminator
        return named

    def names(self, *prefixes: str) -> List[str]:
        """Parameter names of the given module prefixes (e.g. "enc", "cls")."""
        return [
            name
            for name in self.params
            if name.split("_")[0].rstrip("0123456789") in prefixes
        ]

    def bind(self) -> "BoundModel":
        return BoundModel(self)

    def copy(self) -> "RankModel":
        return RankModel(
            dims=list(self.dims),
            d_e=self.d_e,
            c=self.c,
            seed=self.seed,
            encoders=list(self.encoders),
            decoders=list(self.decoders),
            classifier=self.classifier,
            discriminator=self.discriminator,
            params={name: value.copy() for name, value in self.params.items()},
        )

    def check_compatible(self, dims: Sequence[int], c: int) -> None:
        if list(dims) != list(self.dims) or c != self.c:
            raise ContractError(
                f"Model expects view dims {self.dims} and {self.c} labels; "
                f"data has view dims {list(dims)} and {c} labels"
            )


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Matrix:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _init_mlp(
    params: Dict[str, Matrix], prefix: str, spec: MlpSpec, rng: np.random.Generator
) -> None:
    for layer, (fan_in, fan_out) in enumerate(spec.layers):
        params[f"{prefix}_w{layer}"] = _glorot(rng, fan_in, fan_out)
        params[f"{prefix}_b{layer}"] = np.zeros((1, fan_out))


def init_model(
    dims: Sequence[int],
    d_e: int,
    c: int,
    seed: int,
    config: Optional[ModelConfig] = None,
) -> RankModel:
    """Glorot-uniform weights, zero biases, deterministic per seed."""
    config = config or ModelConfig(d_e=d_e)
    if config.d_e != d_e:
        config = replace(config, d_e=d_e)
    dims = [int(d) for d in dims]
    if not dims or any(d < 1 for d in dims) or c < 1:
        raise ContractError(
            f"init_model needs positive view dims and labels (dims={dims}, c={c})"
        )
    m = len(dims)
    encoders = [MlpSpec((d, *config.hidden, d_e)) for d in dims]
    decoders = [MlpSpec((d_e, *reversed(config.hidden), d)) for d in dims]
    classifier = MlpSpec((d_e, c), "sigmoid")
    discriminator = MlpSpec((m * d_e, config.discriminator_width(m), m), "softmax")

    model = RankModel(dims, d_e, c, seed, encoders, decoders, classifier, discriminator)
    rng = RngStream(seed).child("model").generator()
    for prefix, spec in model.specs().items():
        _init_mlp(model.params, prefix, spec, rng)
    total = sum(p.size for p in model.params.values())
    logger.debug(f"Initialized model with {total} parameters")
    return model


# =============================================================================
# FORWARD PASSES
# =============================================================================


def mlp_forward(leaves: Dict[str, Node], prefix: str, spec: MlpSpec, x: Node) -> Node:
    if x.cols != spec.widths[0]:
        raise DimensionError(f"{prefix} input", x.shape, (x.rows, spec.widths[0]))
    h = x
    for layer in range(spec.n_layers):
        h = matmul(h, leaves[f"{prefix}_w{layer}"]) + leaves[f"{prefix}_b{layer}"]
        if layer < spec.n_layers - 1:
            h = relu(h)
    if spec.output_activation == "sigmoid":
        return sigmoid(h)
    if spec.output_activation == "softmax":
        return softmax_rows(h)
    return h


class BoundModel:
    """A model whose parameters are graph leaves for one forward/backward pass.

    Every use of a parameter within the pass shares the same leaf, so the
    classifier applied to fused and per-view embeddings accumulates into one
    gradient. ``overrides`` substitutes caller-built nodes for some parameters.
    """

    def __init__(
        self, model: RankModel, overrides: Optional[Mapping[str, Node]] = None
    ):
        self.model = model
        self.leaves = {
            name: Node.leaf(value, name) for name, value in model.params.items()
        }
        for name, node in (overrides or {}).items():
            if name not in self.leaves:
                raise ContractError(f"Unknown parameter '{name}'")
            if node.shape != self.leaves[name].shape:
                expected = self.leaves[name].shape
                raise DimensionError(f"parameter {name}", node.shape, expected)
            self.leaves[name] = node

    def encode(self, x, v: int) -> Node:
        return mlp_forward(self.leaves, f"enc{v}", self.model.encoders[v], _as_node(x))

    def decode(self, z, v: int) -> Node:
        return mlp_forward(self.leaves, f"dec{v}", self.model.decoders[v], _as_node(z))

    def discriminate(self, zs: Sequence) -> Node:
        if len(zs) != self.model.m:
            raise ContractError(
                f"Discriminator expects {self.model.m} embeddings, got {len(zs)}"
            )
        joined = concat_cols([_as_node(z) for z in zs])
        return mlp_forward(self.leaves, "disc", self.model.discriminator, joined)

    def classify(self, z) -> Node:
        return mlp_forward(self.leaves, "cls", self.model.classifier, _as_node(z))

    def gradients(self) -> Dict[str, Matrix]:
        return collect_gradients(self.leaves)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else const(x)


def _as_bound(model: Union[RankModel, BoundModel]) -> BoundModel:
    return model if isinstance(model, BoundModel) else model.bind()


def encode(model: Union[RankModel, BoundModel], x, v: int) -> Node:
    return _as_bound(model).encode(x, v)


def decode(model: Union[RankModel, BoundModel], z, v: int) -> Node:
    return _as_bound(model).decode(z, v)


def discriminate(model: Union[RankModel, BoundModel], zs: Sequence) -> Node:
    """Per-sample view quality scores B (rows sum to 1)."""
    return _as_bound(model).discriminate(zs)


def classify(model: Union[RankModel, BoundModel], z) -> Node:
    """Label probabilities in [EPS, 1 - EPS]."""
    return _as_bound(model).classify(z)


@dataclass
class ForwardBundle:
    """Intermediates of one forward pass over a batch."""

    z: List[Node]
    recon: List[Node]
    b: Optional[Node]
    z_bar: Node
    p: Node
    p_views: List[Node]


# =============================================================================
# CHECKPOINTS
# =============================================================================


def save_checkpoint(
    model: RankModel,
    directory: Union[str, Path],
    epoch: int,
    fusion: str = "dynamic",
    static_weights: Optional[Sequence[float]] = None,
) -> Path:
    """Write ``manifest.json`` and one CSV per parameter matrix.

    The manifest also records the fusion mode used in training.
    """
    directory = Path(directory)
    if fusion not in FUSION_MODES:
        raise ContractError(f"fusion must be one of {FUSION_MODES}, got '{fusion}'")
    manifest = {
        "dims": list(model.dims),
        "d_e": model.d_e,
        "c": model.c,
        "seed": int(model.seed),
        "epoch": int(epoch),
        "fusion": fusion,
        "static_weights": (
            [float(w) for w in static_weights] if static_weights is not None else None
        ),
        "specs": {name: spec.to_dict() for name, spec in model.specs().items()},
        "parameters": sorted(model.params),
    }
    for name, value in model.params.items():
        write_matrix_csv(value, directory / f"{name}.csv")
    write_json(manifest, directory / "manifest.json")
    logger.info(f"Saved checkpoint (epoch {epoch}) to {directory}")
    return directory


def load_checkpoint(directory: Union[str, Path]) -> Tuple[RankModel, int]:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    manifest = read_json(manifest_path)
    for key in ("dims", "d_e", "c", "seed", "epoch", "specs", "parameters"):
        if not isinstance(manifest, dict) or key not in manifest:
            raise ManifestError(manifest_path, key, "is missing")
    dims = manifest["dims"]
    m = len(dims)
    try:
        specs = {
            name: MlpSpec(tuple(spec["widths"]), spec.get("output_activation", "none"))
            for name, spec in manifest["specs"].items()
        }
        model = RankModel(
            dims=[int(d) for d in dims],
            d_e=int(manifest["d_e"]),
            c=int(manifest["c"]),
            seed=int(manifest["seed"]),
            encoders=[specs[f"enc{v}"] for v in range(m)],
            decoders=[specs[f"dec{v}"] for v in range(m)],
            classifier=specs["cls"],
            discriminator=specs["disc"],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ManifestError(manifest_path, "specs", f"is incomplete or malformed ({e})")

    expected = {}
    for prefix, spec in model.specs().items():
        for layer, (fan_in, fan_out) in enumerate(spec.layers):
            expected[f"{prefix}_w{layer}"] = (fan_in, fan_out)
            expected[f"{prefix}_b{layer}"] = (1, fan_out)
    if sorted(expected) != sorted(manifest["parameters"]):
        reason = "does not match the layer specs"
        raise ManifestError(manifest_path, "parameters", reason)
    for name in sorted(expected):
        rows, cols = expected[name]
        path = directory / f"{name}.csv"
        model.params[name] = read_matrix_csv(path, rows=rows, cols=cols)
    logger.debug(f"Loaded checkpoint from {directory}")
    return model, int(manifest["epoch"])


def load_fusion(directory: Union[str, Path]) -> Tuple[str, Optional[Tuple[float, ...]]]:
    """Fusion mode and static weights stored with a checkpoint.

    Manifests without a ``fusion`` field read as ``dynamic``.
    """
    manifest_path = Path(directory) / "manifest.json"
    manifest = read_json(manifest_path)
    fusion = manifest.get("fusion", "dynamic") if isinstance(manifest, dict) else None
    if fusion not in FUSION_MODES:
        raise ManifestError(manifest_path, "fusion", f"must be one of {FUSION_MODES}")
    weights = manifest.get("static_weights")
    if fusion == "static":
        if not isinstance(weights, list) or not weights:
            reason = "is required for static fusion"
            raise ManifestError(manifest_path, "static_weights", reason)
        return fusion, tuple(float(w) for w in weights)
    return fusion, None
