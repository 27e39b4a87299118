"""Exception types shared across the package."""


class SearchError(Exception):
    """Base class for all package errors."""


class IllegalAction(SearchError):
    pass


class LengthMismatch(SearchError):
    pass


class InvalidEncoding(SearchError):
    pass


class SpaceTooLarge(SearchError):
    pass


class AlreadyExpanded(SearchError):
    pass


class NoValidTerminal(SearchError):
    """A rollout could not reach a complete terminal architecture."""


class EmptyPredictions(SearchError):
    pass


class UnknownOutcome(SearchError):
    pass


class DimensionMismatch(SearchError):
    pass


class EmptyDataset(SearchError):
    pass


class DegenerateVariance(SearchError):
    pass


class IncompleteArchitecture(SearchError):
    pass


class TableError(SearchError):
    """Problem with a tabular benchmark file; ``line`` is 1-based."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(TableError):
    pass


class InvalidTableEncoding(TableError):
    pass


class AccuracyOutOfRange(TableError):
    pass


class DuplicateKey(TableError):
    pass


class NotInTable(SearchError):
    pass


class ProtocolError(SearchError):
    pass


class SnapshotError(SearchError):
    pass


class VersionMismatch(SnapshotError):
    pass


class CorruptSnapshot(SnapshotError):
    pass
