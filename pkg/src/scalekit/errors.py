"""Exception and warning types shared across scalekit."""


class ScalekitError(Exception):
    """Base class for all library errors."""


class ValidationError(ScalekitError, ValueError):
    """An input object violates one of its structural invariants."""

    def __init__(self, message, invariant=None, entry=None):
        super().__init__(message)
        self.invariant = invariant
        self.entry = entry


class DimensionMismatch(ValidationError):
    pass


class NegativeArgument(ValidationError):
    pass


class EmptySupport(ValidationError):
    pass


class RangeError(ValidationError):
    pass


class ThetaOutOfRange(ValidationError):
    """The tilting parameter lies at or beyond the MGF abscissa."""


class NumericalError(ScalekitError, ArithmeticError):
    pass


class SingularMatrix(NumericalError):
    pass


class SingularSystem(NumericalError):
    pass


class DefectiveModel(ScalekitError):
    """A computation that needs a conservative modulator got a killed one."""


class NoBracket(NumericalError):
    pass


class CensoredMajority(ScalekitError):
    """Too many simulated paths hit the step cap."""

    def __init__(self, message, n_censored=0, n_paths=0):
        super().__init__(message)
        self.n_censored = n_censored
        self.n_paths = n_paths


class TruncationWarning(UserWarning):
    """The truncated series tail is not negligible at working precision."""


class ParseError(ScalekitError):
    pass


class SchemaError(ScalekitError):
    def __init__(self, message, pointer=""):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer


class SemanticError(SchemaError):
    pass
