"""Exception hierarchy shared by all modules."""


class PKSError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(PKSError, ValueError):
    """Invalid parameters or configuration input."""


class DegenerateProfileError(PKSError, ValueError):
    """A species has zero discrete mass where positive mass is required."""


class UndefinedCOMError(PKSError, ValueError):
    """Center of mass requested for a field with zero total mass."""


class MassMismatchError(PKSError, ValueError):
    """Two measures that must share total mass do not."""


class NumericalFailure(PKSError, ArithmeticError):
    """NaN, overflow, or a broken positivity/CFL contract during a solve."""

    def __init__(self, message, species=None, cell=None):
        super().__init__(message)
        self.species = species
        self.cell = cell


class SolverNotConverged(PKSError, RuntimeError):
    """An iterative solver hit its iteration cap; carries its best iterate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
