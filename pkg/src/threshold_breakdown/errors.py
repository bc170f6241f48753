"""Exception hierarchy shared by the library and the command line."""


class BreakdownError(Exception):
    """Base class for all library errors."""


class DomainError(BreakdownError, ValueError):
    """An argument lies outside the domain of the requested operation."""


class DegenerateError(BreakdownError, ValueError):
    """The data make the requested quantity undefined (zero scale, zero information)."""


class ExtrapolationError(BreakdownError, ValueError):
    """A tabulated score was evaluated outside its grid."""


class NumericError(BreakdownError, ArithmeticError):
    """A numerical routine failed to converge."""


class BudgetError(BreakdownError, RuntimeError):
    """An exhaustive search would exceed its enumeration budget."""


class DataError(BreakdownError, ValueError):
    """Input data could not be parsed or validated."""
