"""Exception types shared across the package."""


class MumarError(Exception):
    """Base class for all errors raised by this package."""


class TooFewPoints(MumarError):
    pass


class DegenerateSet(MumarError):
    pass


class EmptyInput(MumarError):
    pass


class EmptyScene(MumarError):
    pass


class NoClustersSurvive(MumarError):
    pass


class ConstraintsUnsatisfiable(MumarError):
    def __init__(self, message, view=None):
        super().__init__(message)
        self.view = view


class NoCorrespondences(MumarError):
    pass


class LengthMismatch(MumarError):
    pass


class NotConverged(MumarError):
    """Iteration limit reached; ``report`` carries the best-so-far result."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class PlyError(MumarError):
    pass
