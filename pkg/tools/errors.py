class BenchError(Exception):
    """Base class for every error raised by the bench."""


class RejectedInputError(BenchError, ValueError):
    """Input violates a shape, range or finiteness precondition."""


class DomainMismatchError(RejectedInputError):
    """Source and target domains differ in something other than P."""


class UndefinedMetricError(BenchError, ArithmeticError):
    """A metric has no defined value for the given inputs."""


class TrainingDivergedError(BenchError, RuntimeError):
    """Training produced a non-finite loss after all retries."""


class ConfigError(BenchError):
    """Experiment configuration is malformed or inconsistent."""


class CheckFailedError(BenchError):
    """A theory check or self-check did not hold."""


def exit_code_for(error: BaseException) -> int:
    """CLI exit status for a failure: 1 config, 2 check, 3 anything else."""
    if isinstance(error, ConfigError):
        return 1
    if isinstance(error, CheckFailedError):
        return 2
    return 3
