"""Exception hierarchy shared across the package."""


class RivampError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(RivampError, ValueError):
    """An argument violates a documented precondition."""


class InvariantError(RivampError, ValueError):
    """A domain object fails one of its construction invariants."""


class DomainError(RivampError, ValueError):
    """A transform was evaluated outside its valid domain."""


class RangeError(RivampError, ValueError):
    """A requested value lies outside the attainable range of a transform.

    The ``attainable`` attribute carries the open interval (lo, hi) of
    reachable values.
    """

    def __init__(self, message: str, attainable: tuple[float, float]):
        super().__init__(f"{message}; attainable range is ({attainable[0]:g}, {attainable[1]:g})")
        self.attainable = attainable


class EvaluationError(RivampError, ValueError):
    """A user-supplied function produced non-finite values on the support."""


class CapabilityError(RivampError, ValueError):
    """A backend was asked for a computation it does not support."""


class IterationError(RivampError, ArithmeticError):
    """A fixed-point update hit an exact division-by-zero guard."""


class DivergenceError(RivampError, RuntimeError):
    """An iterative run produced non-finite values; carries the trace so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class DiagnosticError(RivampError, RuntimeError):
    """A cross-check could not be carried out (for instance a solver did not converge)."""
