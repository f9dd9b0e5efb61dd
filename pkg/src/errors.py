from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence, Tuple


class GlueError(Exception):
    """Base class for every error the toolkit raises on purpose."""


class TapeShapeError(GlueError, ValueError):
    def __init__(self, op_kind: str, dims: Sequence[Tuple[int, ...]], detail: str = ""):
        self.op_kind = op_kind
        self.dims = [tuple(d) for d in dims]
        msg = f"shape mismatch in '{op_kind}': input shapes {self.dims}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonScalarRootError(GlueError, ValueError):
    def __init__(self, shape: Tuple[int, ...]):
        self.shape = tuple(shape)
        super().__init__(f"backward() needs a scalar root, got shape {self.shape}")


class NonFiniteGradientError(GlueError, FloatingPointError):
    def __init__(self, block: str):
        self.block = block
        super().__init__(f"non-finite gradient in parameter block '{block}'")


class CsvParseError(GlueError, ValueError):
    def __init__(self, path: Path | str, message: str, row: Optional[int] = None, column: Optional[str] = None):
        self.path = Path(path)
        self.row = row
        self.column = column
        where = str(self.path)
        if row is not None:
            where += f", row {row}"
        if column is not None:
            where += f", column '{column}'"
        super().__init__(f"{where}: {message}")


class PreprocessError(GlueError, ValueError):
    pass


class WindowError(GlueError, ValueError):
    pass


class GraphError(GlueError, ValueError):
    pass


class ConfigError(GlueError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        self.key = key
        super().__init__(message if key is None else f"{key}: {message}")


class TrainingDivergedError(GlueError, FloatingPointError):
    def __init__(self, epoch: int, step: int, loss: float):
        self.epoch = epoch
        self.step = step
        self.loss = loss
        super().__init__(f"loss became non-finite ({loss}) at epoch {epoch}, step {step}")


class CheckpointError(GlueError, ValueError):
    pass


class SensorMismatchError(GlueError, ValueError):
    def __init__(self, missing: Sequence[str], extra: Sequence[str]):
        self.missing = list(missing)
        self.extra = list(extra)
        super().__init__(
            "checkpoint and dataset sensors differ; "
            f"missing from dataset: {self.missing or '-'}; not in checkpoint: {self.extra or '-'}"
        )


class ScoringError(GlueError, ValueError):
    pass


class EvaluationError(GlueError, ValueError):
    pass


class BaselineError(GlueError, ValueError):
    pass
