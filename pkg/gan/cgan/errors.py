"""Exception hierarchy shared by the conditional GAN toolkit."""
from typing import Sequence


class GanToolError(Exception):
    """Base class for every error raised by the toolkit."""


class ShapeError(GanToolError, ValueError):
    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ''):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        rendered = ' vs '.join(str(list(s)) for s in self.shapes)
        message = f"{op}: incompatible shapes {rendered}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class DegenerateBatchError(ShapeError):
    pass


class ContractError(GanToolError, ValueError):
    pass


class LabelError(GanToolError, ValueError):
    def __init__(self, score):
        self.score = score
        super().__init__(f"score {score} not in label set")


class PoisonedGradientError(GanToolError, ArithmeticError):
    def __init__(self, param_name: str):
        self.param_name = param_name
        super().__init__(f"non-finite gradient for parameter '{param_name}', step refused")


class TrainingDivergedError(GanToolError, ArithmeticError):
    def __init__(self, which: str, epoch: int, batch: int, value: float):
        self.which = which
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"{which} is {value} at epoch {epoch} batch {batch}")


class ManifestError(GanToolError, ValueError):
    def __init__(self, path, message: str, line_number: int = None):
        self.path = str(path)
        self.line_number = line_number
        where = f"{self.path}:{line_number}" if line_number is not None else self.path
        super().__init__(f"{where}: {message}")


class CheckpointError(GanToolError, ValueError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class DatasetWriteError(GanToolError, OSError):
    pass


class UsageError(GanToolError):
    """Bad command line or config input; the CLI exits with status 1."""
