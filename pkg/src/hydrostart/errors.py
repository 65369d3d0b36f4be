"""Exception hierarchy shared by all hydrostart modules."""


class HydrostartError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(HydrostartError, ValueError):
    """Bad user input: parameters, config values or file contents."""


class InvalidSurface(ValidationError):
    pass


class NonFiniteState(HydrostartError, ArithmeticError):
    pass


class EmptySignal(ValidationError):
    pass


class IncompatibleRates(ValidationError):
    pass


class UntrainedNet(HydrostartError, RuntimeError):
    pass


class NonPositiveSigma(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class DegenerateDataset(ValidationError):
    pass


class NoFeasibleStart(HydrostartError, RuntimeError):
    pass


class NoFeasiblePoint(HydrostartError, RuntimeError):
    pass


class CampaignExhausted(HydrostartError, RuntimeError):
    pass


class ValidationFailure(ValidationError):
    """A measured trajectory was rejected; the campaign state is untouched."""


class StateVersionMismatch(HydrostartError):
    pass
