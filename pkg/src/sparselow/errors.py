"""Exception types shared across the package."""


class SparseLowError(Exception):
    """Base class for all sparselow errors."""


class ParameterError(SparseLowError, ValueError):
    """An argument or configuration value violates its contract."""


class NumericalError(SparseLowError, ArithmeticError):
    """A numerical routine produced an unusable result."""


class BudgetExceededError(SparseLowError):
    """An enumeration would exceed its configured budget."""
