"""Exception hierarchy shared by every module of the package."""


class CqivError(Exception):
    """Base class for all package errors."""


class RankDeficient(CqivError):
    """Design matrix is (numerically) collinear on its weighted support."""


class NonFinite(CqivError, ValueError):
    """Input contains NaN or infinite values."""


class DomainError(CqivError, ValueError):
    """Argument outside the mathematical domain of a function."""


class Separation(CqivError):
    """Binary-response data are perfectly separated (or single-class)."""


class EmptySelection(CqivError):
    """A selection rule retained no observations."""


class NotFitted(CqivError):
    """An object was used before being fitted."""


class SpecMismatch(CqivError):
    """A requested functional is incompatible with the regressor layout."""


class TooFewDraws(CqivError):
    """Not enough successful bootstrap draws to form an interval."""


class NonConvergence(CqivError):
    """An iterative optimiser hit its iteration cap."""


class ConfigError(CqivError, ValueError):
    """Run configuration is invalid or inconsistent."""


class DataError(CqivError, ValueError):
    """Input data file is malformed or incomplete."""
