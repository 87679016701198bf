"""Exception types shared across the package."""


class TabGraphError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(TabGraphError):
    pass


class InvalidLayout(TabGraphError):
    pass


class ArityMismatch(TabGraphError):
    pass


class DegenerateColumn(TabGraphError):
    pass


class NonFiniteLoss(TabGraphError):
    pass


class UndefinedAUC(TabGraphError):
    pass


class ZeroVariance(TabGraphError):
    pass


class InsufficientSamples(TabGraphError):
    pass


# Exceptions that the CLI maps to the "numeric failure" exit code.
NUMERIC_ERRORS = (NotPositiveDefinite, DegenerateColumn, NonFiniteLoss, ZeroVariance)
