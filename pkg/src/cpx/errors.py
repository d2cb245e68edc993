"""Exception types shared across the package."""


class CpxError(Exception):
    """Base class for all errors raised by cpx."""


class InputError(CpxError, ValueError):
    """An argument has the wrong shape or an invalid value."""


class ConfigError(CpxError, ValueError):
    """A configuration is inconsistent or incomplete."""


class FormatError(CpxError, ValueError):
    """A data file does not follow its declared binary format."""


class UnsupportedMethodError(CpxError):
    """The requested method cannot run on the given problem."""


class ConstraintError(CpxError, ValueError):
    """A precondition of an analysis formula is violated."""


class MisuseError(CpxError):
    """A checker was fed data that does not satisfy its own contract."""


class TheoryViolation(CpxError):
    """An online convergence certificate failed during a run."""

    def __init__(self, message, round_index=None):
        super().__init__(message)
        self.round_index = round_index
