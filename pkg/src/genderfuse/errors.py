"""Exception hierarchy shared across the package."""


class GenderfuseError(Exception):
    """Base class for every error this package raises on purpose."""


class CorpusError(GenderfuseError):
    """Bad corpus data: malformed files, duplicate ids, missing labels."""


class TextPipeError(GenderfuseError):
    """Preprocessing failure, e.g. a user with no surviving tokens."""


class ShapeError(GenderfuseError):
    """Tensor shape or index disagreement."""


class CheckpointError(GenderfuseError):
    """Unreadable, corrupt, or mismatched model checkpoint."""


class TrainingError(GenderfuseError):
    """Training diverged (non-finite loss or gradient)."""


class BaselineError(GenderfuseError):
    """TF-IDF / linear model misuse (empty vocabulary, single class...)."""


class StatsError(GenderfuseError):
    """Contingency analysis failure (unresolvable users, empty margins)."""


class ConfigError(GenderfuseError):
    """Bad run configuration: unknown keys, unparsable values."""
