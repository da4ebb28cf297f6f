"""Exception hierarchy shared across the harness."""


class MetaODError(Exception):
    """Base class for every error raised by this package."""


class ContractViolation(MetaODError):
    """A caller broke an operation's precondition."""


class DegenerateAnnotationError(MetaODError):
    """Annotation yields fewer than three vertices or an empty mask."""


class AnnotationBoundsError(MetaODError):
    """Annotation does not fall on the image it references."""


class MissingCategoryError(MetaODError, KeyError):
    """No object instances exist for a requested category."""

    def __str__(self) -> str:
        return Exception.__str__(self)


class PlacementExhaustedError(MetaODError):
    """Sampler ran out of attempts without finding a non-overlapping spot."""


class DetectorError(MetaODError):
    """Base class for failures talking to a detector."""


class TransportError(DetectorError):
    """Endpoint could not be reached or the adapter process failed."""


class RateLimitError(TransportError):
    """Endpoint kept answering HTTP 429 after the full backoff schedule."""


class ProtocolError(DetectorError):
    """Endpoint answered with a payload that violates the wire format."""


class UnknownBackgroundError(DetectorError):
    """A mock detector was queried with an image it has no ground truth for."""


class CampaignAbort(MetaODError):
    """Campaign cannot start, e.g. the endpoint is unreachable."""
