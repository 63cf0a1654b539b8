"""Exception hierarchy shared by all modules."""


class VcgateError(Exception):
    """Base class for errors raised by vcgate."""


class InvalidInputError(VcgateError, ValueError):
    pass


class InvalidMeanError(InvalidInputError):
    """A mean lies outside the open domain of its link."""


class SingularWeightError(InvalidInputError):
    """A mean on the boundary would produce a zero or infinite weight."""


class DesignError(VcgateError, ValueError):
    """Inconsistent or rank-deficient design matrices."""


class DegenerateResponseError(VcgateError, ValueError):
    """The response carries no information about the variance components."""


class InsufficientDfError(VcgateError, ValueError):
    """Too few residual degrees of freedom for the finite-sample null."""


class InvalidStatisticError(InvalidInputError):
    pass


class InvalidNullError(InvalidInputError):
    pass


class ConvergenceError(VcgateError, RuntimeError):
    """A fit could not produce any usable result."""


class IngestionError(VcgateError, ValueError):
    """Problems reading a dataset or model configuration."""
