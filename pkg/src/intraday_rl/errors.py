"""Exception types shared across the package."""


class IntradayError(Exception):
    """Base class for domain errors (CLI maps these to exit code 1)."""


class EmptyInput(IntradayError):
    pass


class NoSeedPrice(IntradayError):
    """No trade exists at or before the first minute of the trading window."""


class InsufficientData(IntradayError):
    pass


class IncompleteProduct(IntradayError):
    pass


class EpisodeDone(IntradayError):
    pass


class IncompleteEpisode(IntradayError):
    pass


class NonFiniteInput(IntradayError):
    pass


class NoForwardPass(IntradayError):
    pass


class ShapeMismatch(IntradayError):
    pass


class NonFiniteLoss(IntradayError):
    def __init__(self, message, minibatch=None):
        super().__init__(message)
        self.minibatch = minibatch


class AgentViolation(IntradayError):
    pass
