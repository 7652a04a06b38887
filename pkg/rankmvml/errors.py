"""Exception hierarchy shared by every rankmvml module."""

from pathlib import Path
from typing import Optional, Union


class RankError(Exception):
    """Base exception for rankmvml operations."""

    pass


class ContractError(RankError):
    """A precondition or configuration constraint was violated."""

    pass


class DimensionError(ContractError):
    """Operand shapes are incompatible."""

    def __init__(self, operation: str, *shapes: tuple):
        shown = " vs ".join(f"{s[0]}x{s[1]}" if len(s) == 2 else str(s) for s in shapes)
        super().__init__(f"{operation}: incompatible shapes {shown}")
        self.operation = operation
        self.shapes = shapes


class UndefinedMetricError(ContractError):
    """A metric has no valid support (e.g. no label with both classes)."""

    pass


class ManifestError(ContractError):
    """A manifest file is malformed; ``field`` names the offending entry."""

    def __init__(self, path: Union[str, Path], field: str, reason: str):
        super().__init__(f"{path}: field '{field}' {reason}")
        self.path = Path(path)
        self.field = field


class ArtifactIOError(RankError):
    """Reading or writing an artifact failed."""

    def __init__(
        self, path: Union[str, Path], reason: str, cause: Optional[Exception] = None
    ):
        super().__init__(f"{path}: {reason}")
        self.path = Path(path)
        self.__cause__ = cause


class TrainingDivergedError(RankError):
    """The training objective became non-finite."""

    pass
