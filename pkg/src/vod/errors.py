"""Exception types shared across the package."""


class VodError(Exception):
    """Base class for errors raised by :mod:`vod`."""


class InvalidArgument(VodError, ValueError):
    """An argument violates a documented precondition."""


class ResourceLimitError(VodError, RuntimeError):
    """A computation would exceed a configured size limit."""
