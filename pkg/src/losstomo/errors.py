"""Exception hierarchy shared by the losstomo modules."""


class LossTomoError(Exception):
    """Base class for every error raised by this package."""


class TopologyError(LossTomoError):
    pass


class TopologySyntaxError(TopologyError):
    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)


class TopologyValidationError(TopologyError):
    pass


class CycleError(TopologyValidationError):
    pass


class MultipleParentsError(TopologyValidationError):
    pass


class DisconnectedError(TopologyValidationError):
    pass


class RootDegreeError(TopologyValidationError):
    pass


class UnidentifiableChainError(TopologyValidationError):
    pass


class ParameterError(LossTomoError, ValueError):
    pass


class ObservationError(LossTomoError):
    pass


class EnumerationCapError(LossTomoError):
    pass


class EstimatorSpecError(LossTomoError, ValueError):
    pass


class DegenerateCountsError(LossTomoError):
    """Raised when the counts give no estimate at all (e.g. a zero denominator)."""


class BoundaryError(LossTomoError, ValueError):
    pass


class ConfigError(LossTomoError):
    pass
