"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid model, problem or scene configuration."""


class DegenerateGeometryError(RuntimeError):
    """Two end effectors coincide, so no separating normal exists."""


class SamplerTuningError(RuntimeError):
    """The MCMC chain accepts too few proposals to be useful."""


class FitError(ValueError):
    """A surrogate model cannot be fitted to the given data."""


class SceneError(RuntimeError):
    """A scene produces too many unusable (deadlocked) trials."""
