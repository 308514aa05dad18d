"""Exception types shared across the package."""


class SwapfError(Exception):
    """Base class for all package-specific errors."""


class MalformedFile(SwapfError):
    """A raster or cache file has a bad magic, header, or payload size."""


class LabelOutOfRange(SwapfError):
    """A raster contains a class id outside [0, class_count)."""


class DegenerateWeights(SwapfError):
    """The sum of unnormalized particle weights underflowed to zero."""


class EmptySupport(SwapfError):
    """Center-semantic initialization found no pixels of the requested class."""


class TrajectoryOutOfBounds(SwapfError):
    """A scenario trajectory leaves the world raster."""


class ZeroResultant(SwapfError):
    """Circular mean is undefined: the weighted resultant vector is ~zero."""


class ConfigError(SwapfError):
    """A run configuration file is missing, malformed, or inconsistent."""
