"""The simulated transparent proxy: redirector, cache and transcoder.

Stages always run in the order redirect -> cache -> upstream -> transcode.
"""
from __future__ import annotations

import enum
import hashlib
import math
import random
import threading
from dataclasses import dataclass, field
from typing import Callable

from ..liveservers import AppResponse
from ..rewrite import IMAGE_CLASSES, ContentClass, classify_content

DEFAULT_CACHEABLE = frozenset({ContentClass.CSS, ContentClass.JS, ContentClass.JPG,
                               ContentClass.PNG, ContentClass.GIF})


@dataclass(frozen=True)
class CacheConfig:
    enabled: bool = False
    ttl_seconds: float = 300.0
    respect_cache_control: bool = True
    cacheable_classes: frozenset[ContentClass] = DEFAULT_CACHEABLE


@dataclass(frozen=True)
class TranscoderConfig:
    enabled: bool = False
    size_threshold_bytes: int = 700 * 1024
    quality_factor: float = 0.5
    classes: frozenset[ContentClass] = IMAGE_CLASSES


@dataclass(frozen=True)
class RedirectorConfig:
    enabled: bool = False


@dataclass(frozen=True)
class ProxyboxConfig:
    intercept_ports: frozenset[int] = frozenset({80})
    split_handshake: bool = True
    cache: CacheConfig = field(default_factory=CacheConfig)
    transcoder: TranscoderConfig = field(default_factory=TranscoderConfig)
    redirector: RedirectorConfig = field(default_factory=RedirectorConfig)
    jitter_seed: int = 0

    def __post_init__(self):
        if 443 in self.intercept_ports:
            raise ValueError("the proxy never intercepts port 443")
        q = self.transcoder.quality_factor
        if not 0 < q <= 1:
            raise ValueError(f"quality_factor must be in (0, 1], got {q}")
        if self.cache.ttl_seconds < 0:
            raise ValueError("ttl_seconds must be non-negative")

    @classmethod
    def from_dict(cls, data: dict | None) -> "ProxyboxConfig":
        data = dict(data or {})
        cache = dict(data.pop("cache", {}) or {})
        if "cacheable_classes" in cache:
            cache["cacheable_classes"] = frozenset(ContentClass(c) for c in cache["cacheable_classes"])
        trans = dict(data.pop("transcoder", {}) or {})
        if "classes" in trans:
            trans["classes"] = frozenset(ContentClass(c) for c in trans["classes"])
        redirector = dict(data.pop("redirector", {}) or {})
        if "intercept_ports" in data:
            data["intercept_ports"] = frozenset(int(p) for p in data["intercept_ports"])
        return cls(cache=CacheConfig(**cache), transcoder=TranscoderConfig(**trans),
                   redirector=RedirectorConfig(**redirector), **data)


class Stage(str, enum.Enum):
    REDIRECTED = "Redirected"
    CACHE_HIT = "CacheHit"
    TRANSCODED = "Transcoded"
    DROPPED = "Dropped"
    UPSTREAM_ERROR = "UpstreamError"


@dataclass(frozen=True)
class SimRequest:
    method: str
    path: str
    headers: tuple[tuple[str, str], ...]
    address: str
    port: int

    def header(self, name: str) -> str | None:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return None

    @property
    def host(self) -> str:
        return (self.header("Host") or "").split(":", 1)[0]


@dataclass(frozen=True)
class FlowResult:
    response: AppResponse | None
    provenance: tuple[Stage, ...]
    # address actually contacted upstream, None on cache hit or drop
    upstream_address: str | None = None
    upstream_bytes: int = 0


@dataclass(frozen=True)
class CacheEntry:
    response: AppResponse
    stored_at: float


def cache_expiry(age_seconds: float, ttl_seconds: float) -> bool:
    """True while an entry of the given age is still fresh."""
    return age_seconds < ttl_seconds


def _directives(value: str | None) -> set[str]:
    if not value:
        return set()
    return {d.strip().split("=", 1)[0].lower() for d in value.split(",") if d.strip()}


def transcode(body: bytes, quality_factor: float) -> bytes:
    """Deterministic stand-in for re-encoding: ceil(q * n) derived bytes."""
    size = math.ceil(quality_factor * len(body))
    seed = hashlib.sha256(body).hexdigest()
    return random.Random("transcode:" + seed).randbytes(size)


class Proxybox:
    """One proxy instance.  ``upstream(address, request)`` delivers a request
    to a server and returns its response, or None if nothing answers;
    ``resolve(hostname)`` is the proxy's own DNS."""

    def __init__(self, config: ProxyboxConfig,
                 upstream: Callable[[str, SimRequest], AppResponse | None],
                 resolve: Callable[[str], tuple[str, ...]],
                 drop_mismatch: bool = False):
        self.config = config
        self.upstream = upstream
        self.resolve = resolve
        self.drop_mismatch = drop_mismatch
        self.cache: dict[tuple[str, str, str], CacheEntry] = {}
        self._lock = threading.Lock()

    def intercepts(self, port: int) -> bool:
        return port in self.config.intercept_ports

    def _cacheable_request(self, req: SimRequest) -> bool:
        cfg = self.config.cache
        if not cfg.enabled or req.method != "GET":
            return False
        if cfg.respect_cache_control and _directives(req.header("Cache-Control")) & {"no-store", "no-cache"}:
            return False
        return classify_content(req.path) in cfg.cacheable_classes

    def _storable(self, req: SimRequest, resp: AppResponse) -> bool:
        cfg = self.config.cache
        if resp.status != 200:
            return False
        ctype = dict((k.lower(), v) for k, v in resp.headers).get("content-type")
        if classify_content(req.path, ctype) not in cfg.cacheable_classes:
            return False
        if cfg.respect_cache_control:
            cc = dict((k.lower(), v) for k, v in resp.headers).get("cache-control")
            if _directives(cc) & {"no-store", "private"}:
                return False
        return True

    def handle_flow(self, req: SimRequest, now_ms: float) -> FlowResult:
        stages: list[Stage] = []
        address = req.address

        # (1) redirector
        resolved = self.resolve(req.host) if req.host else ()
        if self.drop_mismatch and resolved and address not in resolved:
            return FlowResult(None, (Stage.DROPPED,))
        if self.config.redirector.enabled and resolved and resolved[0] != address:
            address = resolved[0]
            stages.append(Stage.REDIRECTED)

        # (2) cache lookup
        key = (address, req.host, req.path)
        cacheable = self._cacheable_request(req)
        if cacheable:
            with self._lock:
                entry = self.cache.get(key)
            if entry is not None and cache_expiry((now_ms - entry.stored_at) / 1000.0,
                                                  self.config.cache.ttl_seconds):
                stages.append(Stage.CACHE_HIT)
                return FlowResult(entry.response, tuple(stages))

        # (3) upstream
        resp = self.upstream(address, SimRequest(req.method, req.path, req.headers, address, req.port))
        if resp is None:
            stages.append(Stage.UPSTREAM_ERROR)
            body = b"upstream unreachable\n"
            return FlowResult(AppResponse(502, (("Content-Type", "text/plain"),
                                                ("Content-Length", str(len(body)))), body),
                              tuple(stages), address, 0)
        upstream_bytes = len(resp.body)

        # (4) transcoder
        tcfg = self.config.transcoder
        ctype = dict((k.lower(), v) for k, v in resp.headers).get("content-type")
        if (tcfg.enabled and resp.status == 200
                and classify_content(req.path, ctype) in tcfg.classes
                and len(resp.body) < tcfg.size_threshold_bytes):
            body = transcode(resp.body, tcfg.quality_factor)
            headers = tuple((k, str(len(body))) if k.lower() == "content-length" else (k, v)
                            for k, v in resp.headers)
            resp = AppResponse(resp.status, headers, body)
            stages.append(Stage.TRANSCODED)

        if cacheable and self._storable(req, resp):
            with self._lock:
                self.cache[key] = CacheEntry(resp, now_ms)
        return FlowResult(resp, tuple(stages), address, upstream_bytes)
