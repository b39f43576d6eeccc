"""Exception types shared across the package.

Everything raised on bad user input (malformed files, out-of-range
arguments, shape mismatches) derives from RazorquantError so the CLI can
map it to exit code 1.  Anything else escaping a command is a bug and
maps to exit code 2.
"""

__all__ = ["RazorquantError", "FormatError", "ValidationError"]


class RazorquantError(Exception):
    """Base class for expected, user-facing failures."""


class FormatError(RazorquantError):
    """A file or byte stream violates one of the container layouts."""


class ValidationError(RazorquantError):
    """An argument, shape, or value fails a documented precondition."""
