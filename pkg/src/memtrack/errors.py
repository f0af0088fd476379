"""Exception hierarchy shared across the package."""


class TrackingError(Exception):
    """Base class for every error raised by memtrack."""


class ContractViolation(TrackingError, ValueError):
    """A caller broke a documented precondition (shape, ordering, range)."""


class DegenerateInputError(TrackingError, ValueError):
    """Input is well-formed but has no meaningful answer (empty mask, zero vector)."""


class CorruptDataError(TrackingError, ValueError):
    pass


class NumericError(TrackingError, ArithmeticError):
    pass


class AlignmentError(TrackingError, ValueError):
    def __init__(self, missing_in_pred, missing_in_gt):
        self.missing_in_pred = sorted(missing_in_pred)
        self.missing_in_gt = sorted(missing_in_gt)
        super().__init__(
            f"masklet ids not aligned: missing in predictions {self.missing_in_pred}, "
            f"missing in ground truth {self.missing_in_gt}"
        )


class ConfigError(TrackingError, ValueError):
    """Invalid configuration value; ``path`` is the dotted field path."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class TrainingDivergedError(TrackingError, RuntimeError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"loss became non-finite at step {step}")


class ManifestReadError(TrackingError, OSError):
    """The manifest could not be read or parsed (as opposed to failing validation)."""
