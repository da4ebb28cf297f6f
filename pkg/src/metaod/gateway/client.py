"""Black-box detector access with caching, rate limiting and accounting."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import shlex
import subprocess
import tempfile
import threading
import time
from dataclasses import asdict, dataclass
from decimal import Decimal
from pathlib import Path
from typing import Callable, Dict, Optional, Protocol, Union

import httpx

from ..core import DetectionSet, ImageBuffer
from ..errors import DetectorError, ProtocolError, RateLimitError, TransportError
from .protocol import QueryContext, canonical_json, parse_response
from .ratelimit import SlidingWindowLimiter

log = logging.getLogger(__name__)

KINDS = ("http", "subprocess", "mock")


@dataclass(frozen=True)
class DetectorEndpoint:
    id: str
    kind: str = "http"
    address: str = ""
    auth_header: Optional[str] = None
    qps_limit: float = 5.0
    max_in_flight: int = 4
    timeout: float = 30_000.0
    cost_per_query: Optional[float] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"endpoint kind must be one of {KINDS}, got {self.kind!r}")
        if not re.fullmatch(r"[A-Za-z0-9_.-]+", self.id):
            raise ValueError(f"endpoint id {self.id!r} must be filesystem-safe")
        if self.qps_limit <= 0:
            raise ValueError("qps_limit must be positive")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be at least 1")

    @property
    def auth_env_var(self) -> str:
        return "METAOD_AUTH_" + re.sub(r"[^A-Z0-9]", "_", self.id.upper())

    def resolved_auth(self) -> Optional[str]:
        return os.environ.get(self.auth_env_var) or self.auth_header

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "DetectorEndpoint":
        return cls(**obj)


@dataclass(frozen=True)
class QueryStats:
    queries_sent: int = 0
    cache_hits: int = 0
    lookups: int = 0
    total_latency: float = 0.0
    estimated_cost: Optional[Decimal] = None


@dataclass(frozen=True)
class Response:
    status: int
    body: bytes
    retry_after: Optional[float] = None


class Transport(Protocol):
    def __call__(self, png: bytes, context: Optional[QueryContext]) -> Response: ...


class DetectorClient(Protocol):
    def detect(self, image: ImageBuffer, context: Optional[QueryContext] = None) -> DetectionSet: ...

    def stats(self) -> QueryStats: ...


def _auth_headers(auth: Optional[str]) -> Dict[str, str]:
    if not auth:
        return {}
    if ":" in auth:
        name, value = auth.split(":", 1)
        return {name.strip(): value.strip()}
    return {"Authorization": auth}


class HttpTransport:
    def __init__(self, endpoint: DetectorEndpoint, client: Optional[httpx.Client] = None):
        self.url = endpoint.address
        self.headers = {"Content-Type": "image/png", **_auth_headers(endpoint.resolved_auth())}
        self.client = client or httpx.Client(timeout=endpoint.timeout / 1000.0)

    def __call__(self, png: bytes, context: Optional[QueryContext] = None) -> Response:
        try:
            r = self.client.post(self.url, content=png, headers=self.headers)
        except httpx.HTTPError as exc:
            raise TransportError(f"POST {self.url} failed: {exc!r}") from exc
        return Response(r.status_code, r.content)

    def close(self) -> None:
        self.client.close()


class SubprocessTransport:
    """One process per query; image path is the only argument, JSON on stdout."""

    def __init__(self, endpoint: DetectorEndpoint):
        self.argv = shlex.split(endpoint.address)
        self.timeout = endpoint.timeout / 1000.0
        if not self.argv:
            raise ValueError("subprocess endpoint needs a command line in 'address'")

    def __call__(self, png: bytes, context: Optional[QueryContext] = None) -> Response:
        with tempfile.TemporaryDirectory(prefix="metaod-") as tmp:
            path = Path(tmp) / "query.png"
            path.write_bytes(png)
            try:
                proc = subprocess.run(self.argv + [str(path)], capture_output=True, timeout=self.timeout)
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise TransportError(f"detector command {self.argv[0]!r} failed: {exc}") from exc
        if proc.returncode != 0:
            err = proc.stderr.decode(errors="replace").strip()[-300:]
            raise TransportError(f"detector command exited with {proc.returncode}: {err}")
        return Response(200, proc.stdout)


class Gateway:
    """Cached, rate-limited, accounted access to one detector endpoint.

    Cache key is ``(endpoint id, sha256 of the PNG)``; entries live in memory
    and, when ``cache_dir`` is set, in ``cache_dir/<endpoint id>/<sha256>.json``.
    Mock endpoints fold the query context into the key, since two placements
    that snap to the same pixels can still get different scripted answers.
    HTTP 429 answers are retried after 1, 2, 4, 8 and 16 seconds.
    """

    backoff_base = 1.0
    backoff_factor = 2.0
    max_retries = 5
    transport_retries = 2

    def __init__(
        self,
        endpoint: DetectorEndpoint,
        transport: Optional[Transport] = None,
        cache_dir: Union[str, Path, None] = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.transport = transport or self._default_transport(endpoint)
        self.cache_dir = Path(cache_dir) / endpoint.id if cache_dir is not None else None
        if self.cache_dir is not None:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._sleep = sleep
        self._limiter = SlidingWindowLimiter(endpoint.qps_limit, clock=clock, sleep=sleep)
        self._slots = threading.BoundedSemaphore(endpoint.max_in_flight)
        self._memory: Dict[str, str] = {}
        self._key_locks: Dict[str, threading.Lock] = {}
        self._lock = threading.Lock()
        self._queries = 0
        self._hits = 0
        self._lookups = 0
        self._latency = 0.0

    @staticmethod
    def _default_transport(endpoint: DetectorEndpoint) -> Transport:
        if endpoint.kind == "http":
            return HttpTransport(endpoint)
        if endpoint.kind == "subprocess":
            return SubprocessTransport(endpoint)
        from .mock import MockScenario, MockTransport

        return MockTransport(MockScenario.load(endpoint.address))

    # cache -------------------------------------------------------------

    def _cache_get(self, key: str) -> Optional[str]:
        if key in self._memory:
            return self._memory[key]
        if self.cache_dir is not None:
            path = self.cache_dir / f"{key}.json"
            if path.exists():
                text = path.read_text()
                self._memory[key] = text
                return text
        return None

    def _cache_put(self, key: str, text: str) -> None:
        self._memory[key] = text
        if self.cache_dir is None:
            return
        fd, tmp = tempfile.mkstemp(dir=self.cache_dir, prefix=".tmp-")
        try:
            with os.fdopen(fd, "w") as fh:
                fh.write(text)
            os.replace(tmp, self.cache_dir / f"{key}.json")
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    # dispatch ----------------------------------------------------------

    def _send(self, png: bytes, context: Optional[QueryContext]) -> bytes:
        rate_retries = 0
        transport_failures = 0
        while True:
            delay = self.backoff_base * self.backoff_factor ** (rate_retries + transport_failures)
            self._limiter.acquire()
            try:
                resp = self.transport(png, context)
            except TransportError:
                if transport_failures >= self.transport_retries:
                    raise
                transport_failures += 1
                log.warning("%s: transport error, retrying in %.1fs", self.endpoint.id, delay)
                self._sleep(delay)
                continue
            if resp.status == 429:
                if rate_retries >= self.max_retries:
                    raise RateLimitError(f"{self.endpoint.id}: still rate limited after {self.max_retries} retries")
                rate_retries += 1
                log.info("%s: HTTP 429, backing off %.1fs", self.endpoint.id, delay)
                self._sleep(delay)
                continue
            if 500 <= resp.status < 600:
                if transport_failures >= self.transport_retries:
                    raise TransportError(f"{self.endpoint.id}: HTTP {resp.status}")
                transport_failures += 1
                self._sleep(delay)
                continue
            if resp.status != 200:
                excerpt = resp.body[:200].decode(errors="replace")
                raise TransportError(f"{self.endpoint.id}: HTTP {resp.status}: {excerpt}")
            return resp.body

    def _key_lock(self, key: str) -> threading.Lock:
        with self._lock:
            return self._key_locks.setdefault(key, threading.Lock())

    def cache_key(self, image: ImageBuffer, context: Optional[QueryContext] = None) -> str:
        """SHA-256 of the PNG; mock answers also depend on the side channel."""
        if context is None or self.endpoint.kind != "mock":
            return image.content_hash
        c = context
        tag = f"{image.content_hash}|{c.center[0]!r}|{c.center[1]!r}|{c.inserted_bbox.as_list()}|{c.label}"
        return hashlib.sha256(tag.encode()).hexdigest()

    def detect(self, image: ImageBuffer, context: Optional[QueryContext] = None) -> DetectionSet:
        key = self.cache_key(image, context)
        with self._lock:
            self._lookups += 1
        with self._key_lock(key):
            cached = self._cache_get(key)
            if cached is not None:
                with self._lock:
                    self._hits += 1
                return parse_response(cached, image.content_hash)
            with self._slots:
                t0 = self._clock()
                body = self._send(image.png_bytes, context)
                elapsed = self._clock() - t0
            result = parse_response(body, image.content_hash)
            self._cache_put(key, canonical_json(result))
            with self._lock:
                self._queries += 1
                self._latency += elapsed * 1000.0
            return result

    def stats(self) -> QueryStats:
        with self._lock:
            cost = None
            if self.endpoint.cost_per_query is not None:
                cost = Decimal(str(self.endpoint.cost_per_query)) * self._queries
            return QueryStats(self._queries, self._hits, self._lookups, self._latency, cost)

    def close(self) -> None:
        close = getattr(self.transport, "close", None)
        if close is not None:
            close()


def detect(endpoint: DetectorEndpoint, image: ImageBuffer, **kwargs) -> DetectionSet:
    """One-shot query; prefer a long-lived :class:`Gateway` for campaigns."""
    gw = Gateway(endpoint, **kwargs)
    try:
        return gw.detect(image)
    finally:
        gw.close()


__all__ = [
    "DetectorClient",
    "DetectorEndpoint",
    "DetectorError",
    "Gateway",
    "HttpTransport",
    "ProtocolError",
    "QueryStats",
    "Response",
    "SubprocessTransport",
    "detect",
]
