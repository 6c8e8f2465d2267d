"""Exception hierarchy shared across the package."""


class DermflowError(Exception):
    """Base class for all package errors."""


class ValidationError(DermflowError, ValueError):
    """A value violates a type invariant or a parameter schema."""


class TraceFormatError(DermflowError, ValueError):
    pass


class RegistrationError(DermflowError):
    pass


class DispatchError(DermflowError):
    pass


class UnknownInputError(DermflowError, KeyError):
    """A fixture-backed tool was asked for an input it has no canned answer for."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class TransportError(DermflowError):
    """A remote endpoint failed. ``category`` is one of timeout/status/malformed/connection."""

    def __init__(self, message, category="connection", status=None):
        super().__init__(message)
        self.category = category
        self.status = status


class PlanParseError(DermflowError, ValueError):
    def __init__(self, message, raw=""):
        super().__init__(message)
        self.raw = raw


class PlannerError(DermflowError):
    pass


class PlanExhausted(PlannerError):
    """The planner has no call left that is not already in the evidence chain."""


class OrchestrationError(DermflowError):
    def __init__(self, message, chain=None):
        super().__init__(message)
        self.chain = chain


class SynthesisError(DermflowError):
    pass


class ConfigurationError(DermflowError, ValueError):
    pass


class IngestionError(DermflowError, ValueError):
    pass


class QueryError(DermflowError, ValueError):
    pass


class OntologyStructureError(DermflowError, ValueError):
    pass


class NotFoundError(DermflowError, LookupError):
    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)


class EvidenceError(DermflowError, ValueError):
    pass


class ManifestError(DermflowError, ValueError):
    pass
