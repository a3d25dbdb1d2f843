"""Exception hierarchy shared by all modules."""


class LdpLabError(Exception):
    """Base class for library errors."""


class DomainError(LdpLabError, ValueError):
    """An argument lies outside the admissible range."""


class DegenerateInputError(DomainError):
    """The input is admissible in type but degenerate (e.g. the zero field)."""


class PreconditionError(LdpLabError, ValueError):
    """A structural precondition of an operator is violated."""


class ManifestError(LdpLabError):
    """A manifest could not be parsed."""


class ValidationError(ManifestError):
    """A manifest parsed but failed an eager check.

    The offending check reports are kept on ``reports``.
    """

    def __init__(self, message, reports=()):
        super().__init__(message)
        self.reports = list(reports)
