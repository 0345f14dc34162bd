"""Exception types raised by the solvers.

Each class carries a short ``code`` so the CLI can map failures onto exit
statuses without string matching.
"""


class NPNSError(Exception):
    code = "ERROR"


class NonConvergedError(NPNSError):
    """An iterative solve hit its iteration cap."""

    code = "NON_CONVERGED"

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class PotentialOverflowError(NPNSError):
    """|z_i * phi| left the range where exp() is representable."""

    code = "OVERFLOW"


class NotUniformError(NPNSError):
    """log(gamma_i) + z_i W is not constant on the selective boundary portion."""

    code = "NOT_UNIFORM"


class CFLViolation(NPNSError):
    code = "CFL_VIOLATION"


class NegativeConcentrationError(NPNSError):
    code = "NEGATIVE_CONCENTRATION"


class DomainError(NPNSError, ValueError):
    code = "DOMAIN"


class MassMismatchError(NPNSError, ValueError):
    code = "MASS_MISMATCH"


class ConfigError(NPNSError, ValueError):
    code = "CONFIG"


class InvariantViolation(NPNSError):
    """A monitored discrete invariant (energy monotonicity, positivity, ...) failed."""

    code = "INVARIANT"

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
