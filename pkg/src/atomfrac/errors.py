"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """A system, schedule, or solver input is structurally invalid."""


class DomainError(ValueError):
    """A numeric argument lies outside the mathematical domain of an operation."""


class NumericalError(ArithmeticError):
    """A computation produced values that cannot be trusted (NaN, collapse,
    or a runtime invariant of the incremental scheme failed)."""


class NonConvergenceError(RuntimeError):
    """The descent solver hit its iteration cap before reaching tolerance.

    Attributes
    ----------
    best : StepResult or None
        Best iterate found so far (lowest objective), if any.
    partial_trace : EvolutionTrace or None
        Completed steps of the surrounding evolution, when raised from one.
    """

    def __init__(self, message, best=None, partial_trace=None):
        super().__init__(message)
        self.best = best
        self.partial_trace = partial_trace


class ScenarioParseError(ValueError):
    """A scenario file is malformed, has unknown keys, or misses required ones."""
