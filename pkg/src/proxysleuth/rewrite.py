"""Content-modification detection.

Each object is fetched over port 80 and port 443 from the measured network
and from a proxy-free baseline vantage.  Bodies are compared by digest of
the exact bytes after transfer decoding but before content decoding, so a
compression proxy that only adds ``Content-Encoding: gzip`` still counts
as a rewrite.
"""
from __future__ import annotations

import csv
import enum
import io
import logging
import posixpath
from dataclasses import dataclass
from html.parser import HTMLParser
from typing import Sequence
from urllib.parse import urljoin, urlsplit

from .errors import InsufficientSweep, MixedObjects
from .prober import FetchSample

log = logging.getLogger(__name__)

HEADER_ALLOWLIST = ("Content-Length", "Content-Type", "Content-Encoding", "Via",
                    "Cache-Control", "X-Cache")
DEFAULT_MIN_OBJECT_SIZE = 5 * 1024


class ContentClass(str, enum.Enum):
    CSS = "CSS"
    JS = "JS"
    JPG = "JPG"
    PNG = "PNG"
    GIF = "GIF"
    HTML = "HTML"
    OTHER = "Other"


MEASURED_CLASSES = frozenset(c for c in ContentClass if c is not ContentClass.OTHER)
IMAGE_CLASSES = frozenset({ContentClass.JPG, ContentClass.PNG, ContentClass.GIF})

_BY_EXTENSION = {
    ".css": ContentClass.CSS,
    ".js": ContentClass.JS, ".mjs": ContentClass.JS,
    ".jpg": ContentClass.JPG, ".jpeg": ContentClass.JPG,
    ".png": ContentClass.PNG,
    ".gif": ContentClass.GIF,
    ".html": ContentClass.HTML, ".htm": ContentClass.HTML,
}
_BY_MIME = {
    "text/css": ContentClass.CSS,
    "text/javascript": ContentClass.JS,
    "application/javascript": ContentClass.JS,
    "application/x-javascript": ContentClass.JS,
    "image/jpeg": ContentClass.JPG,
    "image/jpg": ContentClass.JPG,
    "image/png": ContentClass.PNG,
    "image/gif": ContentClass.GIF,
    "text/html": ContentClass.HTML,
    "application/xhtml+xml": ContentClass.HTML,
}
CONTENT_TYPES = {
    ContentClass.CSS: "text/css",
    ContentClass.JS: "application/javascript",
    ContentClass.JPG: "image/jpeg",
    ContentClass.PNG: "image/png",
    ContentClass.GIF: "image/gif",
    ContentClass.HTML: "text/html; charset=utf-8",
    ContentClass.OTHER: "application/octet-stream",
}


def classify_content(url: str, content_type: str | None = None) -> ContentClass:
    """Content-Type wins over the URL extension when it is recognised."""
    if content_type:
        mime = content_type.split(";", 1)[0].strip().lower()
        if mime in _BY_MIME:
            return _BY_MIME[mime]
    ext = posixpath.splitext(urlsplit(url).path)[1].lower()
    return _BY_EXTENSION.get(ext, ContentClass.OTHER)


@dataclass(frozen=True)
class ObjectRef:
    url: str
    content_class: ContentClass
    expected_size: int | None = None
    size_unknown: bool = False

    @classmethod
    def from_url(cls, url: str, content_type: str | None = None,
                 expected_size: int | None = None) -> "ObjectRef":
        return cls(url, classify_content(url, content_type), expected_size)

    def with_size(self, size: int | None, content_type: str | None = None) -> "ObjectRef":
        klass = classify_content(self.url, content_type) if content_type else self.content_class
        return ObjectRef(self.url, klass, size, size is None)


class _EmbedParser(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.found: list[str] = []

    def handle_starttag(self, tag, attrs):
        attrs = {k.lower(): v for k, v in attrs if v is not None}
        if tag in ("img", "script") and attrs.get("src"):
            self.found.append(attrs["src"])
        elif tag == "link" and attrs.get("href"):
            rel = attrs.get("rel", "").lower().split()
            if "stylesheet" in rel:
                self.found.append(attrs["href"])

    handle_startendtag = handle_starttag


def extract_embedded_objects(html: bytes | str, base_url: str) -> list[ObjectRef]:
    """img/script/stylesheet references resolved against ``base_url``,
    deduplicated in document order."""
    if isinstance(html, bytes):
        html = html.decode("utf-8", errors="replace")
    parser = _EmbedParser()
    try:
        parser.feed(html)
        parser.close()
    except Exception as exc:  # html.parser is tolerant; this is belt and braces
        log.warning("could not parse page at %s: %s", base_url, exc)
    seen, refs = set(), []
    for raw in parser.found:
        url = urljoin(base_url, raw.strip())
        if urlsplit(url).scheme not in ("http", "https") or url in seen:
            continue
        seen.add(url)
        refs.append(ObjectRef.from_url(url))
    if not refs and html.strip():
        log.debug("no embedded objects found at %s", base_url)
    return refs


def eligible_objects(objects: Sequence[ObjectRef],
                     min_size: int = DEFAULT_MIN_OBJECT_SIZE) -> list[ObjectRef]:
    """Objects of a measured class that are big enough to show a timing
    effect.  Objects of unknown size are kept and flagged."""
    out = []
    for obj in objects:
        if obj.content_class not in MEASURED_CLASSES:
            continue
        if obj.expected_size is None:
            out.append(ObjectRef(obj.url, obj.content_class, None, True))
        elif obj.expected_size >= min_size:
            out.append(obj)
    return out


@dataclass(frozen=True)
class ContentObservation:
    object: ObjectRef
    port: int
    body_digest: str
    body_length: int
    content_type: str
    selected_headers: tuple[tuple[str, str], ...]
    fetch_time: float
    status: int = 200

    @classmethod
    def from_fetch(cls, obj: ObjectRef, sample: FetchSample) -> "ContentObservation":
        allowed = {h.lower(): h for h in HEADER_ALLOWLIST}
        selected = tuple((allowed[k.lower()], v) for k, v in sample.headers
                         if k.lower() in allowed)
        return cls(obj, sample.port, sample.body_digest, sample.body_length,
                   sample.header("Content-Type", "") or "", selected,
                   sample.fetch_time, sample.status)

    @property
    def failed(self) -> bool:
        return self.status >= 400

    def header_map(self) -> dict[str, str]:
        return {k.lower(): v for k, v in self.selected_headers}


class RewriteClass(str, enum.Enum):
    NO_REWRITE = "NoRewrite"
    PROXY_REWRITTEN = "ProxyRewritten"
    SERVER_DIFFERENTIATED = "ServerDifferentiated"
    INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class RewriteEvidence:
    length_delta: int
    digest_mismatch: bool
    changed_headers: tuple[str, ...]
    baseline_digest_mismatch: bool | None = None


@dataclass(frozen=True)
class RewriteVerdict:
    object: ObjectRef
    classification: RewriteClass
    evidence: RewriteEvidence

    @property
    def header_only(self) -> bool:
        return not self.evidence.digest_mismatch and bool(self.evidence.changed_headers)


def _changed_headers(a: ContentObservation, b: ContentObservation) -> tuple[str, ...]:
    ha, hb = a.header_map(), b.header_map()
    return tuple(h for h in HEADER_ALLOWLIST if ha.get(h.lower()) != hb.get(h.lower()))


def classify_rewrite(cell80: ContentObservation | None, cell443: ContentObservation | None,
                     base80: ContentObservation | None = None,
                     base443: ContentObservation | None = None,
                     obj: ObjectRef | None = None) -> RewriteVerdict:
    """Port-80 vs port-443 comparison on the measured network, judged
    against the same comparison from the baseline vantage.

    Header-only differences are reported in the evidence but never change
    the classification.
    """
    present = [o for o in (cell80, cell443, base80, base443) if o is not None]
    if not present and obj is None:
        raise MixedObjects("no observations")
    urls = {o.object.url for o in present} | ({obj.url} if obj is not None else set())
    if len(urls) != 1:
        raise MixedObjects(sorted(urls))
    obj = obj or present[0].object

    if cell80 is not None and cell443 is not None:
        evidence = RewriteEvidence(
            length_delta=cell80.body_length - cell443.body_length,
            digest_mismatch=cell80.body_digest != cell443.body_digest,
            changed_headers=_changed_headers(cell80, cell443),
        )
    else:
        evidence = RewriteEvidence(0, False, ())

    if cell80 is None or cell443 is None or cell80.failed or cell443.failed:
        return RewriteVerdict(obj, RewriteClass.INCONCLUSIVE, evidence)
    if base80 is None or base443 is None or base80.failed or base443.failed:
        return RewriteVerdict(obj, RewriteClass.INCONCLUSIVE, evidence)

    base_mismatch = base80.body_digest != base443.body_digest
    evidence = RewriteEvidence(evidence.length_delta, evidence.digest_mismatch,
                               evidence.changed_headers, base_mismatch)
    if base_mismatch:
        klass = RewriteClass.SERVER_DIFFERENTIATED
    elif evidence.digest_mismatch:
        klass = RewriteClass.PROXY_REWRITTEN
    else:
        klass = RewriteClass.NO_REWRITE
    return RewriteVerdict(obj, klass, evidence)


@dataclass(frozen=True)
class TranscodingProfile:
    mapping: tuple[tuple[int, int], ...]
    # smallest original size from which every larger sample came through untouched
    threshold: int | None
    # largest original size that was still modified; the threshold lies in (lower_bound, threshold]
    lower_bound: int | None

    def to_csv(self) -> bytes:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["original_size", "observed_size"])
        writer.writerows(self.mapping)
        return buf.getvalue().encode()


def transcoding_profile(originals: Sequence[tuple[int, ContentObservation]],
                        rewritten: Sequence[tuple[int, ContentObservation]]) -> TranscodingProfile:
    """Map original image sizes to what the measured network delivered.

    ``originals`` and ``rewritten`` hold (nominal size, observation) pairs
    and are matched by object URL.  Original size is the body length of
    the original observation.
    """
    observed = {obs.object.url: obs for _, obs in rewritten}
    mapping = []
    for _, orig in originals:
        got = observed.get(orig.object.url)
        if got is None:
            continue
        mapping.append((orig.body_length, got.body_length))
    mapping.sort()
    if len({o for o, _ in mapping}) < 3:
        raise InsufficientSweep(f"need at least 3 distinct sizes, got {len(mapping)}")

    modified = [orig for orig, seen in mapping if orig != seen]
    lower = max(modified) if modified else None
    above = [orig for orig, _ in mapping if lower is None or orig > lower]
    threshold = min(above) if above else None
    return TranscodingProfile(tuple(mapping), threshold, lower)
