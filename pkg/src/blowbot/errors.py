"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid configuration: bad key, bad value, or an impossible combination."""


class PlacementError(ConfigError):
    """Could not place bodies in the environment (too crowded for rejection sampling)."""


class PhysicsFault(RuntimeError):
    """Internal simulation fault (e.g. NaN in a body state). Never recoverable."""


class SchedulingFault(RuntimeError):
    """Multi-level bookkeeping was driven out of order (e.g. double-opened pending)."""
