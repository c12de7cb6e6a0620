"""Exception hierarchy shared by every stage of the pipeline."""


class SpiralisError(Exception):
    """Base class for all library errors."""


class InvalidStateError(SpiralisError, ValueError):
    pass


class ValidationError(SpiralisError, ValueError):
    """Raised by :func:`spiralis.problem.validate`.

    ``issues`` holds one ``(code, message)`` pair per violated invariant.
    """

    def __init__(self, issues):
        self.issues = list(issues)
        super().__init__("; ".join(f"{code}: {msg}" for code, msg in self.issues))

    @property
    def codes(self):
        return [code for code, _ in self.issues]


class IntegratorDivergence(SpiralisError, ArithmeticError):
    def __init__(self, step, message="implicit stage iteration did not converge"):
        self.step = step
        super().__init__(f"{message} (step {step})")


class CallbackFailure(SpiralisError, FloatingPointError):
    pass


class SolverError(SpiralisError, RuntimeError):
    pass


class StructureError(SpiralisError, ValueError):
    pass


class AmbiguousStructureError(StructureError):
    def __init__(self, ranges):
        self.ranges = list(ranges)
        spans = ", ".join(f"[{a}, {b}]" for a, b in self.ranges)
        super().__init__(f"control values between bang and zero at nodes {spans}")


class StructureMismatchError(StructureError):
    def __init__(self, n_constraints, n_unknowns, message=""):
        self.n_constraints = n_constraints
        self.n_unknowns = n_unknowns
        text = f"{n_constraints} independent constraints for {n_unknowns} unknowns"
        super().__init__(f"{text}{': ' + message if message else ''}")


class InsufficientDualsError(SpiralisError, ValueError):
    pass
