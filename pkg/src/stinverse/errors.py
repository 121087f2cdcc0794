"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    pass


class MeshError(ValueError):
    """A mesh violates orientation, conformity or tagging rules."""


class MeshParseError(MeshError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PerturbationError(MeshError):
    pass


class SingularMatrixError(ArithmeticError):
    pass


class SolverFailureError(ArithmeticError):
    pass


class NonConvergenceError(ArithmeticError):
    """CG hit ``maxit``; carries the best iterate and its relative residual."""

    def __init__(self, message, x=None, residual=None, iterations=None):
        super().__init__(message)
        self.x = x
        self.residual = residual
        self.iterations = iterations


class AssemblyInconsistencyError(ArithmeticError):
    pass


class ConfigurationError(ValueError):
    pass


class GuardError(RuntimeError):
    """A diagnostic refused to run because the problem is too large."""
