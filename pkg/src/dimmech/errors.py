"""Exception hierarchy shared by all modules."""


class DimmechError(Exception):
    pass


# dimensioned arithmetic
class MeasurandSpaceMismatch(DimmechError):
    pass


class DimensionMismatch(DimmechError):
    def __init__(self, message, path=None, expected=None, found=None):
        super().__init__(message)
        self.path = path
        self.expected = expected
        self.found = found


class ZeroDenominator(DimmechError):
    pass


class DimensionOverflow(DimmechError, OverflowError):
    pass


class ParseError(DimmechError):
    def __init__(self, message, position=None, source=None):
        self.position = position
        self.source = source
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)


# fields
class UnknownVariable(ParseError):
    pass


class DomainError(DimmechError, ArithmeticError):
    pass


class NonFinite(DimmechError, ArithmeticError):
    pass


class ChartMismatch(DimmechError):
    pass


# line bundles
class BasePointMismatch(DimmechError):
    pass


class NoInverseDeclared(DimmechError):
    pass


class CoordinateNameClash(DimmechError):
    pass


class VanishingDenominator(DimmechError):
    pass


# jacobi structures
class DegenerateEta(DomainError):
    pass


class UncertifiedInput(DimmechError):
    pass


class SampleOffSurface(DimmechError):
    pass


class SampleOffGraph(SampleOffSurface):
    pass


class LengthMismatch(DimmechError):
    pass


# dynamics
class LeftDomain(DimmechError):
    def __init__(self, t, state):
        super().__init__(f"trajectory left the chart at t={t!r}, state={list(state)!r}")
        self.t = t
        self.state = state


class StepUnderflow(DimmechError):
    pass


class InconsistentInputs(DimmechError):
    pass


# scenarios
class ConfigError(DimmechError):
    pass


class UnresolvedReference(ConfigError):
    pass
