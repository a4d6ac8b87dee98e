"""Exception hierarchy shared across the package."""


class ForgeError(Exception):
    """Base class for all package errors."""


class DegenerateCutoffError(ForgeError, ValueError):
    """Cutoff endpoints coincide."""


class OutOfDomainError(ForgeError, ValueError):
    """A sample or evaluation point lies outside the valid domain."""


class PoleError(OutOfDomainError):
    """Evaluation at the pole of the conformal involution."""


class SingularPointError(OutOfDomainError):
    """Evaluation at the logarithmic singularity of the Green's function."""


class DialRangeError(ForgeError, ValueError):
    """A construction dial is outside its admissible range."""


class IllConditionedFitError(ForgeError, ValueError):
    """Fit radii too small for floating point resolution."""


class ChartDegeneracyError(ForgeError):
    """Metric of a chart is numerically degenerate."""


class NearConePointError(ForgeError):
    """Geodesic of the auxiliary metric gets too close to the axis."""


class SlidingDomainError(ForgeError, ValueError):
    """Height function too large for the sliding decomposition."""


class BridgeTooLargeError(ForgeError, ValueError):
    """Bridge does not fit inside the ball."""


class CollarError(ForgeError):
    """Boundary collar coordinates are not invertible."""


class NoConvergence(ForgeError):
    """An iteration failed to reach its tolerance."""

    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history or [])


class SingularSystemError(ForgeError):
    """Discrete linear system is singular."""


class GroupNotClosedError(ForgeError):
    """Reflection group enumeration exceeded its cap."""


class MeshWeldError(ForgeError):
    """Chart seams could not be welded into a consistent mesh."""


class ConditioningError(SingularSystemError):
    """Discrete linear system is too ill-conditioned to trust."""

    def __init__(self, msg, condition=None):
        super().__init__(msg)
        self.condition = condition


class NewtonDivergenceError(NoConvergence):
    """Newton residual grew on consecutive iterations."""


class BracketError(ForgeError, ValueError):
    """The root-finding bracket does not enclose a sign change."""

    def __init__(self, msg, endpoints=None):
        super().__init__(msg)
        self.endpoints = endpoints


class ClosureError(MeshWeldError):
    """Seam vertices of neighbouring copies do not coincide."""

    def __init__(self, msg, worst=None):
        super().__init__(msg)
        self.worst = worst


class SchemaError(ForgeError, ValueError):
    """A config or run record does not match the expected schema."""
