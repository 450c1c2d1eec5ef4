"""Exception hierarchy. Each error carries the CLI exit code it maps to."""

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class FieldAmortError(Exception):
    exit_code = EXIT_UNEXPECTED


class ConfigError(FieldAmortError):
    exit_code = EXIT_USAGE

    def __init__(self, field: str, msg: str):
        self.field = field
        super().__init__(f"{field}: {msg}" if field else msg)


class UsageError(FieldAmortError):
    exit_code = EXIT_USAGE


class UnsupportedKindError(FieldAmortError):
    exit_code = EXIT_USAGE


class ShapeError(FieldAmortError, ValueError):
    exit_code = EXIT_USAGE


class DatasetIOError(FieldAmortError):
    exit_code = EXIT_IO


class FormatVersionError(DatasetIOError):
    pass


class TruncatedFileError(DatasetIOError):
    pass


class ChecksumError(DatasetIOError):
    pass


class CheckpointIOError(FieldAmortError):
    exit_code = EXIT_IO


class NumericalError(FieldAmortError):
    exit_code = EXIT_NUMERIC


class DivergenceError(NumericalError):
    def __init__(self, stage: int, epoch: int, loss: float, reason: str):
        self.stage = stage
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"training diverged at stage {stage}, epoch {epoch}: {reason} (loss={loss!r})")


class MetricsError(FieldAmortError):
    exit_code = EXIT_NUMERIC
