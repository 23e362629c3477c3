"""Exception types raised by the solvers."""


class SGFlowError(Exception):
    pass


class NonConvergence(SGFlowError):
    """An iterative solver hit its iteration budget."""

    def __init__(self, message, iterations=None, residual=None, partial=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual
        self.partial = partial  # best state reached, when available


class DegenerateCell(SGFlowError):
    """A Laguerre cell is empty where a nonempty one is required."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class ZeroMassRegion(DegenerateCell):
    pass


class SupportViolation(SGFlowError):
    pass


class ConfigError(SGFlowError):
    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key
