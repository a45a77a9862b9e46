"""Typed exceptions shared across the package."""


class GraphSNLSError(Exception):
    """Base class for every error raised by this package."""


# graph construction
class GraphConstructionError(GraphSNLSError):
    pass


class SelfLoopError(GraphConstructionError):
    pass


class DuplicateEdgeError(GraphConstructionError):
    pass


class NonpositiveWeightError(GraphConstructionError):
    pass


class DisconnectedGraphError(GraphConstructionError):
    pass


class TooFewNodesError(GraphConstructionError):
    pass


class NotALatticeError(GraphSNLSError):
    pass


# density-manifold domain
class OutOfDomainError(GraphSNLSError):
    pass


class BoundaryDensityError(GraphSNLSError):
    pass


class ZeroAmplitudeError(GraphSNLSError):
    pass


# time integration
class FixedPointDivergedError(GraphSNLSError):
    pass


class DensityFloorError(GraphSNLSError):
    """A density component fell to or below the configured floor."""


# control / optimization
class NonConstantSigmaError(GraphSNLSError):
    pass


class RegressionIllConditionedError(GraphSNLSError):
    pass


class LineSearchFailedError(GraphSNLSError):
    pass


class CostUndefinedError(GraphSNLSError):
    """Raised when a path failure makes the Monte-Carlo cost undefined."""


# configuration / CLI
class ConfigError(GraphSNLSError):
    pass
