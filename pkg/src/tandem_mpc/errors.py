"""Exception types raised across the package."""


class TandemMpcError(Exception):
    """Base class for all package errors."""


class AngleNearPi(TandemMpcError):
    """Rotation logarithm requested for an angle too close to pi."""


class InfeasibleStart(TandemMpcError):
    pass


class SingularFlatMap(TandemMpcError):
    """Commanded specific force vanishes (free fall), so thrust direction is undefined."""


class RiccatiDivergence(TandemMpcError):
    pass


class DimensionMismatch(TandemMpcError):
    pass


class InfeasibleBounds(TandemMpcError):
    """Reference input lies outside the actuator limits."""


class NumericalBreakdown(TandemMpcError):
    pass


class SolverFailure(TandemMpcError):
    """Too many consecutive QP failures inside the closed loop."""
