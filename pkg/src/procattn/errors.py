"""Exception hierarchy shared by the pipeline and mapped to CLI exit codes."""


class ProcAttnError(Exception):
    exit_code = 1


class ConfigError(ProcAttnError):
    """Bad usage, profile or configuration."""

    exit_code = 1


class DataError(ProcAttnError):
    """Input data is malformed, empty or inconsistent."""

    exit_code = 2


class LogParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ArtifactFormatError(DataError):
    pass


class NumericError(ProcAttnError):
    exit_code = 3


class TrainingDivergedError(NumericError):
    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch}"
        )
