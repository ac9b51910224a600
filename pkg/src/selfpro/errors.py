"""Exception types shared across the package.

Every domain error raised by this library derives from SelfProError so the
CLI can map it to exit code 1; anything else escaping is a bug.
"""


class SelfProError(Exception):
    """Base class for all selfpro domain errors."""


class LoadError(SelfProError):
    """A dataset directory or required file is missing or unreadable."""


class ParseError(SelfProError):
    """A file exists but its contents cannot be parsed."""


class ShapeError(SelfProError):
    """Matrix dimensions are inconsistent with the operation."""


class ArgumentError(SelfProError):
    """An argument value is outside the operation's domain."""


class SplitError(SelfProError):
    """A requested node/edge split is infeasible or empty."""


class SamplingError(SelfProError):
    """Random sampling could not satisfy the request."""


class MetricError(SelfProError):
    """A metric is undefined for the given inputs."""


class PretextError(SelfProError):
    """The pretext loss is undefined on this graph (e.g. no edges at all)."""


class DivergenceError(SelfProError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, message: str = ""):
        self.epoch = epoch
        super().__init__(message or f"non-finite loss at epoch {epoch}")


class TuningError(SelfProError):
    """Prompt tuning failed (divergence or unusable inputs)."""


class PrototypeError(SelfProError):
    """A class prototype cannot be built (empty support set)."""


class SimilarityError(SelfProError):
    """Similarity is undefined (zero vector under cosine)."""


class ConfigError(SelfProError):
    """A configuration file or override is invalid."""


class CheckpointError(SelfProError):
    """A checkpoint or adapter archive is missing, corrupt or mismatched."""
