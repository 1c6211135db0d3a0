"""Exception hierarchy shared by all modules."""


class GasNetError(Exception):
    """Base class for every error raised by the package."""


# network-core
class DanglingEdge(GasNetError):
    pass


class Disconnected(GasNetError):
    pass


class SelfLoop(GasNetError):
    pass


class DuplicateId(GasNetError):
    pass


class MissingValue(GasNetError):
    pass


# hydraulics
class LaminarRegime(GasNetError):
    pass


class NonConvergence(GasNetError):
    pass


class PressureCollapse(GasNetError):
    def __init__(self, msg, edge=None):
        super().__init__(msg)
        self.edge = edge


class ChokedFlow(GasNetError):
    pass


class InvalidScheme(GasNetError):
    pass


class ClosedValveFlow(GasNetError):
    pass


# mincost-flow
class Infeasible(GasNetError):
    def __init__(self, msg, witness=None):
        super().__init__(msg)
        self.witness = witness


class Unbounded(GasNetError):
    pass


class UnbalancedFlow(GasNetError):
    pass


class NonDifferentiable(GasNetError):
    pass


# netopt
class NoConvergence(GasNetError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class MissingSetpoint(GasNetError):
    pass


class BudgetExhausted(GasNetError):
    def __init__(self, msg, incumbent=None, gap=None):
        super().__init__(msg)
        self.incumbent = incumbent
        self.gap = gap


class Stalled(GasNetError):
    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


# tracking
class AmbiguousPath(GasNetError):
    def __init__(self, msg, branch_nodes=()):
        super().__init__(msg)
        self.branch_nodes = list(branch_nodes)


class NoPath(GasNetError):
    pass


class ZeroFlowRegion(GasNetError):
    def __init__(self, msg, nodes=()):
        super().__init__(msg)
        self.nodes = list(nodes)


# contracts
class OverlappingIntervals(GasNetError):
    pass


class MissingPriceProcedure(GasNetError):
    pass


class EmptyIntersection(GasNetError):
    pass


class OutOfInterval(GasNetError):
    def __init__(self, msg, nearest=None):
        super().__init__(msg)
        self.nearest = nearest


class HydraulicallyInfeasible(GasNetError):
    def __init__(self, msg, failing=()):
        super().__init__(msg)
        self.failing = list(failing)


class UnroutableMeter(GasNetError):
    pass


class TierOverflow(GasNetError):
    """Raised only when a caller asks for strict invoicing."""


# cli-io
class ParseError(GasNetError):
    def __init__(self, msg, line=None, column=None):
        loc = f" (line {line}" + (f", column {column}" if column else "") + ")" if line else ""
        super().__init__(msg + loc)
        self.line = line
        self.column = column


class SchemaError(GasNetError):
    pass


class StateRejected(GasNetError):
    """A computed state failed the check made before results are written."""

    def __init__(self, msg, violations=()):
        super().__init__(msg)
        self.violations = list(violations)
