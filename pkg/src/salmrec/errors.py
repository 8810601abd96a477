"""Exception hierarchy shared across the package."""


class SalmRecError(Exception):
    """Base class; ``code`` is the short machine-readable reason used by the CLI."""

    code = "error"


class InvalidDimensionError(SalmRecError, ValueError):
    code = "invalid-dimension"


class ShapeMismatchError(SalmRecError, ValueError):
    code = "shape-mismatch"


class GenerationError(SalmRecError, RuntimeError):
    code = "generation-failed"

    def __init__(self, seed, message):
        super().__init__(f"seed {seed}: {message}")
        self.seed = seed


class DatasetError(SalmRecError, OSError):
    code = "dataset"


class EmptyDatasetError(DatasetError):
    code = "empty-dataset"


class CheckpointError(SalmRecError, OSError):
    code = "checkpoint"


class MetricError(SalmRecError, ValueError):
    code = "metric"


class ConfigError(SalmRecError, ValueError):
    code = "config"


class NonFiniteLossError(SalmRecError, FloatingPointError):
    code = "non-finite-loss"

    def __init__(self, step, term, value):
        super().__init__(f"step {step}: loss term {term!r} is {value}")
        self.step = step
        self.term = term
