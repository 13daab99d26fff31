class UndefinedSampleError(ValueError):
    """A statistic was requested on an empty conditional sample."""


class InsufficientDataError(ValueError):
    """Too few defined replicates to carry out a test."""


class DegenerateSequenceError(ValueError):
    """The sequence contains only one kind of outcome."""
