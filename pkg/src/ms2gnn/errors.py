"""Exception types shared across the package."""


class Ms2gnnError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(Ms2gnnError):
    """Tensor shapes are incompatible for the requested operation."""


class DomainError(Ms2gnnError):
    """An input value lies outside the mathematical domain of an operation."""


class ConfigError(Ms2gnnError):
    """A configuration value is invalid or inconsistent."""


class TrainingError(Ms2gnnError):
    """Training aborted (NaN gradients, NaN loss, bad optimizer state)."""


class SmilesParseError(Ms2gnnError):
    """SMILES text could not be parsed.

    Carries the byte offset of the offending character in ``offset``.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class SpectrumError(Ms2gnnError):
    """A spectrum value violates its contract (empty, all-zero, wrong state)."""


class MspFormatError(Ms2gnnError):
    """An MSP stream is malformed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class DataFileError(Ms2gnnError):
    """A manifest, split, candidate, or report file is malformed."""


class CheckpointError(Ms2gnnError):
    """A checkpoint file is corrupt, truncated, or version-incompatible."""


class CandidateFetchError(Ms2gnnError):
    """Candidate retrieval failed (network down without cache, empty result)."""


class RankingError(Ms2gnnError):
    """A ranking or report operation received unusable input."""
