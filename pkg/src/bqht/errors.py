"""Exception taxonomy shared by all modules.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit codes without inspecting types one by one:
1 = bad input, 2 = inadmissible or unstable system, 3 = size cap exceeded,
4 = solver failure or internal inconsistency.
"""


class BqhtError(Exception):
    exit_code = 4


class ParseError(BqhtError):
    """Malformed instance data, options, or requests."""

    exit_code = 1


class DimensionMismatch(ParseError):
    pass


class InvalidMenu(ParseError):
    pass


class InvalidConfig(ParseError):
    pass


class NonMonotoneTargets(ParseError):
    """Wait-implementation targets must be strictly increasing and positive."""


class InadmissibleInstance(BqhtError):
    """The arrival path leaves some server subset without positive slack."""

    exit_code = 2

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class UnstableInstance(BqhtError):
    exit_code = 2


class Infeasible(BqhtError):
    """The menu cannot route the limiting demand to the servers."""

    exit_code = 2


class PrefixSlackViolation(BqhtError):
    """A prefix of aggregated slacks is non-positive for some ranking.

    This signals an inadmissible slack direction, and is raised as a hard
    error rather than propagating NaNs through the wait formulas.
    """

    exit_code = 2

    def __init__(self, message, sigma=None, kappa=None):
        super().__init__(message)
        self.sigma = sigma
        self.kappa = kappa


class UnstableDetected(BqhtError):
    """Simulation aborted because the queue exceeded the safety bound."""

    exit_code = 2


class NoAdmissibleOrder(BqhtError):
    """No ranking of the components keeps every slack prefix positive, so no
    menu can realize the requested wait ordering."""

    exit_code = 2


class StructuralZero(BqhtError):
    """A state's product form divides by a zero arrival rate; the state is
    unreachable and carries probability zero."""


class TooLarge(BqhtError):
    exit_code = 3


class SolverFailure(BqhtError):
    exit_code = 4


class MaxIterations(SolverFailure):
    pass


class NoRoot(SolverFailure):
    pass


class CycleDetected(SolverFailure):
    """The component graph contains a cycle; this indicates an internal
    inconsistency because the graph is acyclic for any valid decomposition."""


class UnsupportedDagPattern(BqhtError):
    """The component graph does not have the shape the requested closed form
    covers; callers may fall back to simulation."""

    exit_code = 4


class ArcNotInMenu(BqhtError):
    exit_code = 1
