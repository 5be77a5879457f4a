"""Exception types shared across the package."""


class NetworkError(ValueError):
    """Structural problem: bad input file, inconsistent graph, empty out-star."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a model evaluation."""


class ConvergenceError(RuntimeError):
    """An iterative solve hit its iteration budget before reaching tolerance."""

    def __init__(self, message, iterations=None, residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class LineSearchError(ConvergenceError):
    """Backtracking line search could not find an acceptable step."""


class OracleUnavailableError(RuntimeError):
    """A brute-force oracle would exceed its enumeration cap."""
