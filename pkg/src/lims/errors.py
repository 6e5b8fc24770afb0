"""Exception taxonomy shared across the package."""


class LimsError(Exception):
    """Base class for all package errors."""


class MalformedUrl(LimsError):
    """Input could not be parsed into a host/path URL."""


class PolicySyntaxError(LimsError):
    """Policy text violates the rule grammar.

    Carries the 1-based line/column of the offending token and the token
    class the parser expected there.
    """

    def __init__(self, message: str, line: int, column: int, expected: str):
        super().__init__(f"{message} (line {line}, column {column}; expected {expected})")
        self.line = line
        self.column = column
        self.expected = expected


class BindingValidationError(LimsError):
    """Condition binding parameters do not validate against the kind's schema."""


class ProviderUnavailable(LimsError):
    """A data provider's backing fixture failed to load."""


class UnknownListDate(LimsError):
    """No ranking list is loaded for the requested date."""


class ResolutionFailure(LimsError):
    """Domain is not resolvable in the DNS fixture."""


class GeoUnknown(LimsError):
    """Resolved IP has no geolocation row."""


class VerificationError(LimsError):
    """Condition evaluation was inconclusive (provider outage, missing input).

    Distinct from a violation: no decision is recorded for the condition.
    """


class UnknownCondition(LimsError):
    """Condition binding kind or custom function is not registered."""


class UnknownLink(LimsError):
    """Link id is not present in the store."""


class StoreError(LimsError):
    """Underlying storage failure."""


class TransportFailure(LimsError):
    """Client-side transport could not reach the backend."""


class ConfigurationError(LimsError):
    """Invalid or missing configuration for the requested operation."""


class InsufficientData(LimsError):
    """Analysis input is too small to produce a determinate answer."""
