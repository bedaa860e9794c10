"""Exception hierarchy shared across the package."""


class FedriskError(Exception):
    """Base class for all package errors."""

    category = "internal"


class ConfigError(FedriskError):
    """Invalid or inconsistent configuration."""

    category = "config"


class DatasetError(FedriskError):
    """Unreadable, malformed, or semantically invalid input data."""

    category = "data"


class SplitError(FedriskError):
    """Train/test split cannot satisfy its contract."""

    category = "data"


class LayoutError(FedriskError):
    """Parameter vector length or layout tag mismatch."""

    category = "training"


class TrainingDivergedError(FedriskError):
    """Training produced a non-finite loss."""

    category = "training"

    def __init__(self, epoch: int, learning_rate: float, context: str = ""):
        self.epoch = epoch
        self.learning_rate = learning_rate
        where = f" in {context}" if context else ""
        super().__init__(
            f"non-finite training loss at epoch {epoch} "
            f"(learning_rate={learning_rate}){where}"
        )


class MetricsError(FedriskError):
    """Metric undefined for the given inputs."""

    category = "data"
