"""Exception hierarchy for the package."""


class PHError(Exception):
    """Base class for all errors raised by dtph."""


class ValidationError(PHError, ValueError):
    """A system, problem or input violates a standing assumption."""


class DimensionMismatch(ValidationError):
    pass


class NonSkewJ(ValidationError):
    pass


class NonPSDR(ValidationError):
    pass


class NonPDQ(ValidationError):
    pass


class SchemaError(ValidationError):
    """Problem file does not follow the documented schema.

    ``path`` is the location inside the JSON tree, e.g. ``"system.B"``.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class NonQuadraticHamiltonian(ValidationError):
    pass


class SingularJminus(PHError, ArithmeticError):
    pass


class QuadratureFailure(PHError, ArithmeticError):
    pass


class NewtonDivergence(PHError, ArithmeticError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class SingularJacobian(PHError, ArithmeticError):
    pass


class StepError(PHError):
    """Raised by ``simulate`` when the one-step map fails at index ``k``."""

    def __init__(self, k, cause):
        self.k = k
        self.cause = cause
        super().__init__(f"step {k} failed: {cause}")


class NoFeasibleGridPoint(PHError):
    pass


class PhaseMismatch(PHError):
    pass


class NotApplicable(PHError):
    pass


class DegenerateSampling(PHError):
    pass


class ExpressionError(ValidationError):
    pass


class ExpressionSyntaxError(ExpressionError):
    def __init__(self, text, position, expected):
        self.text = text
        self.position = position
        self.expected = tuple(expected)
        exp = ", ".join(self.expected)
        super().__init__(f"syntax error at position {position} in {text!r}: expected {exp}")


class UnknownIdentifier(ExpressionError):
    def __init__(self, name, position=None):
        self.name = name
        self.position = position
        where = f" at position {position}" if position is not None else ""
        super().__init__(f"unknown identifier {name!r}{where}")


class EvaluationError(ExpressionError, ArithmeticError):
    pass
