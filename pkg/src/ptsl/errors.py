"""Exception types shared across the package."""


class PtslError(Exception):
    """Base class for package errors."""


class ShapeError(PtslError, ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(PtslError, ValueError):
    """Input values lie outside an operation's numeric domain."""


class ContractError(PtslError, RuntimeError):
    """An API precondition was violated by the caller."""


class TaskError(PtslError, IndexError):
    """A task index is outside the configured task range."""


class ConfigError(PtslError, ValueError):
    """An experiment or network configuration is invalid."""


class InfeasibleError(PtslError, ValueError):
    """No candidate satisfies the requested constraint."""


class TrainingDiverged(PtslError, RuntimeError):
    """A loss became non-finite during training.

    Carries a diagnostic snapshot describing the state at the failing step.
    """

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
