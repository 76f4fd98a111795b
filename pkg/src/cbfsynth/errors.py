"""Exception hierarchy shared across the package."""


class CbfError(Exception):
    """Base class for all errors raised by cbfsynth."""


class InvalidArgument(CbfError, ValueError):
    pass


class InvalidPoles(InvalidArgument):
    pass


class NumericalFailure(CbfError):
    """A function evaluation produced a non-finite value."""

    def __init__(self, message, coordinate=None, state=None):
        super().__init__(message)
        self.coordinate = coordinate
        self.state = state


class DivergedState(NumericalFailure):
    pass


class DivergedFlow(NumericalFailure):
    pass


class InfeasiblePointwise(CbfError):
    """No admissible input satisfies the safety constraint at this state."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = None if state is None else list(state)


class NotACLFHere(InfeasiblePointwise):
    pass


class RelativeDegreeViolation(CbfError):
    pass


class OutsideSafeSet(CbfError):
    pass


class SingularBarrierPoint(CbfError):
    pass


class ParseError(CbfError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownScenario(CbfError):
    pass


class ConfigError(CbfError):
    pass
