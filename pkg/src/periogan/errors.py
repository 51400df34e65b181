"""Exception hierarchy shared by every periogan module."""


class PeriOganError(Exception):
    """Base class for all toolkit errors."""


# corpus
class EmptyCorpus(PeriOganError):
    pass


class IOFailure(PeriOganError):
    pass


class InvalidTarget(PeriOganError, ValueError):
    pass


class InvalidBatchSize(PeriOganError, ValueError):
    pass


class InvalidPolicy(PeriOganError, ValueError):
    pass


# ganzoo
class ShapeError(PeriOganError, ValueError):
    pass


class ConditioningError(PeriOganError, ValueError):
    pass


class DomainError(PeriOganError, ValueError):
    pass


class EmptyBatch(PeriOganError, ValueError):
    pass


class InvalidBound(PeriOganError, ValueError):
    pass


# trainer
class InvalidConfig(PeriOganError, ValueError):
    pass


class ChecksumError(PeriOganError):
    pass


class DivergedRun(PeriOganError):
    """Training produced a non-finite or runaway loss.

    ``last_row`` holds the last log row whose losses were finite (or None
    when the very first step diverged).
    """

    def __init__(self, message, last_row=None):
        super().__init__(message)
        self.last_row = last_row


# quality
class EmbedError(PeriOganError):
    pass


class InsufficientSamples(PeriOganError, ValueError):
    pass


class InvalidPerplexity(PeriOganError, ValueError):
    pass


# padlab
class MissingClass(PeriOganError, ValueError):
    pass
