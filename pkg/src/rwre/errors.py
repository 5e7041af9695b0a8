"""Exception hierarchy shared by all modules.

The classes map one-to-one onto the failure modes surfaced by the CLI:
bad law parameters, a law outside the regime a computation needs, an
index outside a sampled window, an exact-distribution horizon that cannot
be certified, and numeric sanity failures (negative probabilities beyond
roundoff, identity residuals above tolerance).
"""


class RwreError(Exception):
    """Base class for all package-specific errors."""


class ParameterError(RwreError, ValueError):
    """Invalid distribution or configuration parameters."""


class RegimeError(RwreError):
    """The environment law is outside the regime required by the operation
    (e.g. not transient to the right, or tail exponent too small)."""


class RangeError(RwreError):
    """A site, time, or table index falls outside the available window."""


class HorizonError(RwreError):
    """A truncated distribution could not be certified below the requested
    tail tolerance within the allowed horizon."""


class NumericError(RwreError):
    """Floating-point output violates a hard sanity bound (sign, mass, or
    identity residual), indicating a logic bug rather than roundoff."""
