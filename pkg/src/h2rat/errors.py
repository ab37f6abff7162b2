"""Exception hierarchy shared by every h2rat module."""


class H2RError(Exception):
    """Base class for all package errors."""


class DimensionError(H2RError, ValueError):
    """Operand shapes do not agree."""


class NumericError(H2RError, ArithmeticError):
    """A non-finite value appeared in a computation."""


class DivergenceError(NumericError):
    """Training produced a non-finite loss or gradient."""


class TapeError(H2RError, RuntimeError):
    """Misuse of a gradient tape (wrong tape, consumed tape, non-scalar loss)."""


class EmptyInputError(H2RError, ValueError):
    pass


class TemplateError(H2RError, KeyError):
    """A (task, abnormality) pair has no reminder template."""


class NoCorrectionError(H2RError, KeyError):
    """The correction table has no entry for a (class, zone) pair."""

    def __init__(self, class_id, zone):
        super().__init__(f"no correction known for class={class_id} zone={zone}")
        self.class_id = class_id
        self.zone = zone

    def __str__(self):
        return self.args[0]


class FormatError(H2RError, ValueError):
    """A binary file is malformed (bad magic, bad manifest)."""


class TruncatedError(FormatError):
    pass


class VersionError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class ShapeMismatchError(FormatError):
    """A stored tensor disagrees with the dimensions declared in its manifest."""
