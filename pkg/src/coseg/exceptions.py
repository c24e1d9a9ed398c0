"""Exception types shared across the package."""


class CosegError(Exception):
    """Base class for all coseg errors."""


class ValidationError(CosegError):
    """Invalid input data, configuration, or precondition violation."""


class ShapeError(ValidationError):
    """Spatially misaligned or incompatible array shapes."""


class DegenerateInputError(ValidationError):
    """Statistically degenerate input (e.g. zero variance)."""


class FormatError(CosegError):
    """Malformed on-disk data: manifest, image, or mask encoding."""


class TrainingDivergedError(CosegError):
    """Loss became non-finite during training."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class CycleAbortedError(CosegError):
    """An active-learning cycle could not complete; prior state is on disk."""

    def __init__(self, cycle_index: int, message: str = ""):
        self.cycle_index = cycle_index
        super().__init__(message or f"cycle {cycle_index} aborted")
