"""Exception hierarchy shared by all qsdlab modules."""


class QSDLabError(Exception):
    """Base class for every error raised by qsdlab."""


class ModelError(QSDLabError, ValueError):
    """Invalid model definition, parameters, or checker input."""


class TransformError(QSDLabError):
    """Failure while building or evaluating the transformed operator."""


class OutOfExtentError(TransformError, ValueError):
    """A point lies outside the tabulated extent of the coordinate change."""


class SingularPointError(TransformError, ValueError):
    """A point is too close to the absorbing facets for singular terms."""


class AlphaRegionError(TransformError):
    """The weight is undefined because confinement fails in the far region."""


class CertificateError(TransformError):
    """No conjugation parameter on the search ladder could be certified."""

    def __init__(self, message, best=None, violations=None):
        super().__init__(message)
        self.best = best
        self.violations = violations


class GridError(QSDLabError, ValueError):
    """Invalid grid request or node budget exceeded."""


class SpectralError(QSDLabError):
    """Eigen-solver or time-stepper failure."""


class SimulationError(QSDLabError):
    """Monte Carlo input error or numerical blow-up."""


class NoiseFloorError(QSDLabError):
    """Monte Carlo signal is indistinguishable from noise on the fit window."""

    def __init__(self, message, times=None, distances=None, half_widths=None):
        super().__init__(message)
        self.times = times
        self.distances = distances
        self.half_widths = half_widths


class ConfigError(QSDLabError, ValueError):
    """Malformed or invalid run configuration."""
