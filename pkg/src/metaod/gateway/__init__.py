from .client import (
    DetectorClient,
    DetectorEndpoint,
    Gateway,
    HttpTransport,
    QueryStats,
    Response,
    SubprocessTransport,
    detect,
)
from .mock import MockScenario, MockTransport, mock_detector
from .protocol import QueryContext, canonical_json, parse_response, response_body

__all__ = [
    "DetectorClient",
    "DetectorEndpoint",
    "Gateway",
    "HttpTransport",
    "MockScenario",
    "MockTransport",
    "QueryContext",
    "QueryStats",
    "Response",
    "SubprocessTransport",
    "canonical_json",
    "detect",
    "mock_detector",
    "parse_response",
    "response_body",
]
