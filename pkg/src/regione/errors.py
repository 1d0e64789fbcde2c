"""Exception types shared across the package."""


class RegionEError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgumentError(RegionEError, ValueError):
    pass


class AlreadyTerminalError(RegionEError):
    """Raised when stepping a latent that already sits at t_0."""


class CacheMissError(RegionEError):
    """Raised when a cached KV snapshot or velocity is requested but absent."""


class CalibrationDegenerateError(RegionEError):
    def __init__(self, indices):
        self.indices = sorted(indices)
        super().__init__(f"no usable velocity-norm ratio at step indices {self.indices}")


class InvalidConfigError(RegionEError, ValueError):
    pass
