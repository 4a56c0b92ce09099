from __future__ import annotations


class EvFusionError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EvFusionError):
    pass


class InvalidInputError(EvFusionError, ValueError):
    pass


class CatalogError(EvFusionError):
    pass


class PartialIntakeError(EvFusionError):
    """Raised when a source returned fewer than four responses.

    ``partial`` holds the report built from whatever was gathered so callers
    can degrade instead of aborting.
    """

    def __init__(self, message: str, partial: object) -> None:
        super().__init__(message)
        self.partial = partial


class BackendError(EvFusionError):
    pass


class BackendTimeout(BackendError):
    pass


class FixtureMiss(BackendError):
    def __init__(self, digest: str, endpoint: str) -> None:
        super().__init__(f"no fixture for endpoint {endpoint!r} with digest {digest}")
        self.digest = digest
        self.endpoint = endpoint


class ReplayDivergence(BackendError):
    def __init__(self, endpoint: str, expected: str, actual: str) -> None:
        super().__init__(
            f"replay diverged on endpoint {endpoint!r}: recorded digest {expected}, request digest {actual}"
        )
        self.endpoint = endpoint
        self.expected = expected
        self.actual = actual


class ReplayExhausted(BackendError):
    pass


class UnredactedEvidenceError(EvFusionError):
    pass


class PipelineInvariantError(EvFusionError):
    pass
