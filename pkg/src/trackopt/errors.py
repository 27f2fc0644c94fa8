"""Exception types shared across the package."""


class TrackOptError(Exception):
    """Base class for all package-specific errors."""


class NonPositiveDepth(TrackOptError):
    """A point lies at or behind the camera plane, so it cannot be projected."""

    def __init__(self, depth: float, timestep: int | None = None):
        self.depth = depth
        self.timestep = timestep
        where = f" at timestep {timestep}" if timestep is not None else ""
        super().__init__(f"point has non-positive camera-frame depth {depth:.6g}{where}")


class SingularInnovation(TrackOptError):
    """The innovation covariance is not invertible to working precision."""

    def __init__(self, message: str = "innovation covariance is singular", timestep: int | None = None):
        self.timestep = timestep
        where = f" at timestep {timestep}" if timestep is not None else ""
        super().__init__(message + where)


class NonPositiveDefinite(TrackOptError):
    """A covariance matrix required to be positive definite is not."""


class NonFiniteGradient(TrackOptError):
    """A gradient evaluation produced NaN or Inf components."""


class RejectionLimit(TrackOptError):
    """Rejection sampling failed to produce a valid sample within the retry budget."""


class ZeroBaseline(TrackOptError):
    """A baseline-relative metric was requested against a zero baseline value."""


class ConfigError(TrackOptError):
    """A scenario or run configuration file failed strict validation."""
