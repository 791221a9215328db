"""Exception types shared across the package."""


class RelcalError(Exception):
    pass


class RankDeficientError(RelcalError, ValueError):
    """The design matrix does not have full column rank.

    ``columns`` names (or indexes) the columns taking part in the
    linear dependence, so the caller can drop one and re-apportion its
    priority.
    """

    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegenerateInputError(RelcalError, ValueError):
    pass


class SingularShiftError(RelcalError, ValueError):
    pass


class NoRootError(RelcalError, RuntimeError):
    """No sign change of the norm equation was found in any scanned interval."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class DiscardRateError(RelcalError, RuntimeError):
    pass
