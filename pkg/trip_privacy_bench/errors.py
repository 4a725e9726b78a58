"""
Exceptions raised by Trip Privacy Bench.

Every error carries the process exit code the command line maps it to:
0 success, 1 I/O, 2 validation, 3 budget/refusal.
"""


class BenchError(Exception):
    """Base class for all bench errors."""

    exit_code = 1


class ConfigError(BenchError):
    """Invalid configuration value or unknown configuration key."""

    exit_code = 2


class SchemaError(BenchError):
    """A CSV file does not follow the expected schema."""

    exit_code = 2

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class CorpusReadError(BenchError):
    """An input corpus could not be read."""

    exit_code = 1


class StorageError(BenchError):
    """An output file could not be written or an input file is missing."""

    exit_code = 1


class PairBudgetExceeded(BenchError):
    """The pairwise Frechet stage would exceed its pair budget."""

    exit_code = 3

    def __init__(self, required, allowed):
        super().__init__(
            f"Pairwise distance matrix needs {required} pairs but the budget allows {allowed}"
        )
        self.required = required
        self.allowed = allowed


class AttackRejected(BenchError):
    """A trip cannot be turned into a malicious counterpart."""

    exit_code = 2


class TrainingDiverged(BenchError):
    """Training produced a non-finite loss."""

    exit_code = 1

    def __init__(self, epoch, batch, loss):
        super().__init__(f"Non-finite loss {loss!r} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
