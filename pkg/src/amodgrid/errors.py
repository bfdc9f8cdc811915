"""Exception hierarchy.

Every error raised by the pipeline carries the CLI exit code it maps to, so
the command-line front end can translate failures without a lookup table.
"""


class AmodGridError(Exception):
    exit_code = 1
    stage = "unknown"


class ScenarioError(AmodGridError):
    """Scenario or network input failed validation."""

    exit_code = 2
    stage = "validation"

    def __init__(self, message, findings=None):
        super().__init__(message)
        self.findings = list(findings or [])


class RoutingError(ScenarioError):
    """Customer trips could not be routed within the horizon or road capacity."""

    stage = "routing"


class InfeasibleError(AmodGridError):
    exit_code = 3
    stage = "optimization"

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


class SolverError(AmodGridError):
    exit_code = 4
    stage = "optimization"


class FeasibilityError(SolverError):
    """A returned solution violates the model beyond tolerance."""

    stage = "audit"


class ConvergenceError(AmodGridError):
    """The exact power-flow sweep did not converge."""

    exit_code = 5
    stage = "power-flow"

    def __init__(self, message, t=None, pdn=None):
        super().__init__(message)
        self.t = t
        self.pdn = pdn
