"""Helper functions: command error handling, validation and artifact IO."""

import functools
import json
import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Union

import click
import numpy as np

from .errors import ArtifactIOError, ContractError, ManifestError, RankError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2

FLOAT_FORMAT = "%.17g"


# =============================================================================
# DECORATORS
# =============================================================================


def _handle_command_errors(operation_name: str):
    """Decorator mapping library errors of a CLI command onto exit codes.

    I/O failures exit with 2, every other rankmvml error with 1.
    """

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except (ArtifactIOError, OSError) as e:
                logger.error(f"Failed to {operation_name}: {e}")
                click.echo(f"error: {e}", err=True)
                raise click.exceptions.Exit(EXIT_IO)
            except RankError as e:
                logger.error(f"Failed to {operation_name}: {e}")
                click.echo(f"error: {e}", err=True)
                raise click.exceptions.Exit(EXIT_VALIDATION)

        return wrapper

    return decorator


# =============================================================================
# VALIDATION HELPERS
# =============================================================================


def _validate_rate(value: float, field_name: str) -> Optional[str]:
    """A missing rate must lie in [0, 1)."""
    if not isinstance(value, (int, float)) or not 0.0 <= value < 1.0:
        return f"{field_name} must lie in [0, 1), got {value!r}"
    return None


def _validate_unit_interval(value: float, field_name: str) -> Optional[str]:
    if not isinstance(value, (int, float)) or not 0.0 <= value <= 1.0:
        return f"{field_name} must lie in [0, 1], got {value!r}"
    return None


def _validate_non_negative(value: float, field_name: str) -> Optional[str]:
    if not isinstance(value, (int, float)) or value < 0:
        return f"{field_name} must be non-negative, got {value!r}"
    return None


def _validate_positive_int(value: int, field_name: str) -> Optional[str]:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
        return f"{field_name} must be a positive integer, got {value!r}"
    return None


def _validate_binary(matrix: np.ndarray, field_name: str) -> Optional[str]:
    if matrix.size and not np.all((matrix == 0) | (matrix == 1)):
        return f"{field_name} must contain only 0/1 entries"
    return None


def _raise_if_errors(errors: Sequence[Optional[str]]) -> None:
    """Raise one ContractError listing every non-empty message."""
    messages = [msg for msg in errors if msg]
    if messages:
        raise ContractError("; ".join(messages))


def parse_int_list(text: Optional[str], field_name: str) -> Optional[List[int]]:
    """Parse ``"1,2,3"`` or ``"0-9"`` into a list of integers."""
    if text is None or not text.strip():
        return None
    values: List[int] = []
    try:
        for part in text.split(","):
            part = part.strip()
            if "-" in part:
                lo, hi = part.split("-", 1)
                values.extend(range(int(lo), int(hi) + 1))
            elif part:
                values.append(int(part))
    except ValueError:
        raise ContractError(
            f"{field_name} must be a comma-separated list of integers, got {text!r}"
        )
    return values


# =============================================================================
# ARTIFACT IO
# =============================================================================


def write_json(payload: Any, path: Union[str, Path]) -> Path:
    """Write JSON with sorted keys so reruns produce identical bytes."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise ArtifactIOError(path, "cannot write JSON", e)
    logger.debug(f"Wrote {path}")
    return path


def read_json(path: Union[str, Path]) -> Any:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ArtifactIOError(path, "cannot read JSON", e)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        reason = f"is not valid JSON ({e.msg} at line {e.lineno})"
        raise ManifestError(path, "<document>", reason)


def write_matrix_csv(
    matrix: np.ndarray,
    path: Union[str, Path],
    header: Optional[Sequence[str]] = None,
    integer: bool = False,
) -> Path:
    """Comma-separated rows; floats use 17 significant digits so values round-trip."""
    path = Path(path)
    matrix = np.asarray(matrix, dtype=np.float64)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if matrix.size == 0:
            path.write_text(",".join(header) + "\n" if header is not None else "")
        else:
            np.savetxt(
                path,
                matrix,
                delimiter=",",
                fmt="%d" if integer else FLOAT_FORMAT,
                header=",".join(header) if header is not None else "",
                comments="",
            )
    except OSError as e:
        raise ArtifactIOError(path, "cannot write CSV", e)
    return path


def read_matrix_csv(
    path: Union[str, Path], rows: Optional[int] = None, cols: Optional[int] = None
) -> np.ndarray:
    """Read a headerless CSV matrix and check its shape when one is expected."""
    path = Path(path)
    if rows == 0:
        if not path.exists():
            raise ArtifactIOError(path, "file not found")
        return np.zeros((0, cols or 0))
    try:
        matrix = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    except OSError as e:
        raise ArtifactIOError(path, "cannot read CSV", e)
    except ValueError as e:
        raise ContractError(f"{path}: malformed CSV ({e})")
    found_rows, found_cols = matrix.shape
    if (rows is not None and found_rows != rows) or (
        cols is not None and found_cols != cols
    ):
        raise ContractError(
            f"{path}: expected a {rows}x{cols} matrix, found {found_rows}x{found_cols}"
        )
    return matrix
