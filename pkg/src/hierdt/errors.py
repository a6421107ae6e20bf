"""Exception hierarchy shared by every engine in the workbench."""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


class ConfigurationError(WorkbenchError, ValueError):
    """Invalid hyperparameter, config value or infeasible sizing."""


class VocabularyMismatchError(WorkbenchError, ValueError):
    pass


class NumericError(WorkbenchError, ArithmeticError):
    """A non-finite value appeared during training or KL evaluation."""


class EmptyInputError(WorkbenchError, ValueError):
    pass


class DegenerateWeightsError(WorkbenchError, ValueError):
    """All aggregation scores were zero."""


class StructuralError(WorkbenchError, ValueError):
    """Models with incompatible vocab or parameter layout were combined."""


class DomainError(WorkbenchError, ValueError):
    """Argument outside the mathematical domain of a function (e.g. p > 1)."""
