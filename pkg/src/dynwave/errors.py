"""Exception types shared across the package."""


class DynwaveError(Exception):
    """Base class for all package errors."""


class InvalidBodyError(DynwaveError):
    """Convex-body definition is malformed (bad dimension, nonpositive radii, ...)."""


class ConfigurationError(DynwaveError):
    """A parameter combination is malformed or out of range."""


class InfeasibleConfigError(DynwaveError):
    """Parameters violate a feasibility gate (delta <= d, beta outside window, ...)."""


class EmptyBetaWindowError(InfeasibleConfigError):
    """The admissible beta interval is empty: the time horizon is too short."""

    def __init__(self, lo: float, hi: float, t_min: float):
        self.lo = lo
        self.hi = hi
        self.t_min = t_min
        super().__init__(
            f"empty beta window ({lo:.6g}, {hi:.6g}); horizon must exceed {t_min:.6g}"
        )


class WeightOverflowError(DynwaveError):
    """exp(lambda * psi) does not fit in float64; rescale or lower lambda."""


class BlowUpError(DynwaveError):
    """Time stepping exceeded the divergence threshold (CFL violation or bad data)."""

    def __init__(self, level: int, value: float):
        self.level = level
        self.value = value
        super().__init__(f"field blew up at time level {level} (max |y| = {value:.3e})")


class ExtensionMismatchError(DynwaveError):
    """Odd time extension requires a vanishing t = 0 slice."""


class AdjointConsistencyError(DynwaveError):
    """Inner-product test between a linear map and its transpose failed."""


class SingularChartError(DynwaveError):
    """Spherical coordinates degenerate at the poles."""
