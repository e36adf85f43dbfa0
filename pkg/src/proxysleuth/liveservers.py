"""Controlled servers: a dual-port origin with deterministic objects, and
the two redirection sentinels.

Request handling lives in :class:`OriginApp` and :class:`SentinelApp`,
which are plain objects mapping a request to a response.  The simulator
hosts the same apps, so a manifest behaves identically in both worlds.
"""
from __future__ import annotations

import datetime
import functools
import hashlib
import html
import ipaddress
import logging
import os
import random
import ssl
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any, Iterable, Sequence

import yaml

from .errors import BindFailure, MissingCertificate
from .redirect import CONTROL_PREFIX, SentinelConfig, token_from_path
from .rewrite import CONTENT_TYPES, ContentClass

log = logging.getLogger(__name__)

Header = tuple[str, str]


@dataclass(frozen=True)
class ObjectSpec:
    path: str
    content_class: ContentClass
    size_bytes: int
    cache_control: str | None = None
    body_seed: int = 0
    # serve different bytes on port 443 than on port 80
    differentiate: bool = False
    # repetitive body that compression proxies can shrink
    compressible: bool = False

    def __post_init__(self):
        if not self.path.startswith("/"):
            raise ValueError(f"object path must start with '/': {self.path!r}")
        if self.size_bytes < 0:
            raise ValueError("size_bytes must be non-negative")

    @property
    def content_type(self) -> str:
        return CONTENT_TYPES[self.content_class]

    def body(self, port: int = 80) -> bytes:
        variant = 1 if self.differentiate and port == 443 else 0
        return object_body(self.path, self.body_seed, self.size_bytes, self.compressible, variant)


@functools.lru_cache(maxsize=256)
def object_body(path: str, seed: int, size: int, compressible: bool = False,
                variant: int = 0) -> bytes:
    """Deterministic body bytes: a pure function of the arguments."""
    key = f"{path}\x00{seed}\x00{variant}"
    if compressible:
        unit = hashlib.sha256(key.encode()).hexdigest().encode() + b"\n"
        return (unit * (size // len(unit) + 1))[:size]
    return random.Random(key).randbytes(size)


def parse_manifest(entries: Iterable[dict[str, Any]]) -> list[ObjectSpec]:
    specs = []
    for entry in entries:
        entry = dict(entry)
        entry["content_class"] = ContentClass(entry.get("content_class", "Other"))
        specs.append(ObjectSpec(**entry))
    return specs


def load_manifest(path: str | os.PathLike) -> list[ObjectSpec]:
    """Manifest files are YAML: either a list of objects or ``{objects: [...]}``."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if isinstance(data, dict):
        data = data.get("objects", [])
    return parse_manifest(data or [])


def default_manifest(seed: int = 0) -> list[ObjectSpec]:
    """One object per measured class at 6 KB, 64 KB, 400 KB and 800 KB."""
    ext = {ContentClass.CSS: "css", ContentClass.JS: "js", ContentClass.JPG: "jpg",
           ContentClass.PNG: "png", ContentClass.GIF: "gif", ContentClass.HTML: "html"}
    specs = []
    for size_kb in (6, 64, 400, 800):
        for klass, suffix in ext.items():
            specs.append(ObjectSpec(f"/obj/{size_kb}k.{suffix}", klass, size_kb * 1024,
                                    "max-age=600", body_seed=seed))
    return specs


@dataclass(frozen=True)
class AppResponse:
    status: int
    headers: tuple[Header, ...]
    body: bytes


def _text(status: int, text: str, content_type: str = "text/plain") -> AppResponse:
    body = text.encode()
    return AppResponse(status, (("Content-Type", content_type),
                                ("Content-Length", str(len(body)))), body)


def _tag(spec: ObjectSpec) -> str | None:
    src = html.escape(spec.path, quote=True)
    if spec.content_class is ContentClass.CSS:
        return f'<link rel="stylesheet" href="{src}">'
    if spec.content_class is ContentClass.JS:
        return f'<script src="{src}"></script>'
    if spec.content_class in (ContentClass.JPG, ContentClass.PNG, ContentClass.GIF):
        return f'<img src="{src}" alt="">'
    return None


class OriginApp:
    """Serves a manifest.  ``/`` is an index page embedding every object
    that has an embeddable class, in manifest order, unless the manifest
    declares ``/`` itself."""

    def __init__(self, manifest: Sequence[ObjectSpec]):
        self.manifest = list(manifest)
        self.by_path = {spec.path: spec for spec in self.manifest}

    def index_page(self) -> bytes:
        lines = ["<!DOCTYPE html>", "<html><head><title>origin</title>"]
        body = []
        for spec in self.manifest:
            tag = _tag(spec)
            if tag is None:
                body.append(f'<a href="{html.escape(spec.path, quote=True)}">{spec.path}</a>')
            elif spec.content_class is ContentClass.CSS:
                lines.append(tag)
            else:
                body.append(tag)
        lines.append("</head><body>")
        lines.extend(body)
        lines.append("</body></html>")
        return "\n".join(lines).encode()

    def handle(self, method: str, path: str, port: int = 80) -> AppResponse:
        path = path.split("?", 1)[0]
        if method not in ("GET", "HEAD"):
            return _text(405, "method not allowed")
        spec = self.by_path.get(path)
        if spec is None:
            if path == "/":
                return self._respond(method, self.index_page(), CONTENT_TYPES[ContentClass.HTML])
            return _text(404, "not found")
        return self._respond(method, spec.body(port), spec.content_type, spec.cache_control)

    @staticmethod
    def _respond(method, body, content_type, cache_control=None):
        headers = [("Content-Type", content_type), ("Content-Length", str(len(body)))]
        if cache_control:
            headers.append(("Cache-Control", cache_control))
        return AppResponse(200, tuple(headers), b"" if method == "HEAD" else body)


@dataclass(frozen=True)
class RequestLogEntry:
    token: str | None
    path: str
    host_header: str
    source_address: str
    arrived_at: float


class RequestLog:
    """Append-only and safe for concurrent append/read."""

    def __init__(self):
        self._entries: list[RequestLogEntry] = []
        self._lock = threading.Lock()

    def append(self, entry: RequestLogEntry) -> None:
        with self._lock:
            self._entries.append(entry)

    def entries(self) -> tuple[RequestLogEntry, ...]:
        with self._lock:
            return tuple(self._entries)

    def count(self, token: str) -> int:
        with self._lock:
            return sum(1 for e in self._entries if e.token == token)

    def received(self, token: str) -> bool:
        return self.count(token) > 0

    def __len__(self):
        with self._lock:
            return len(self._entries)


class SentinelApp:
    def __init__(self, config: SentinelConfig, log: RequestLog | None = None):
        self.config = config
        self.log = log if log is not None else RequestLog()

    def handle_data(self, method: str, path: str, host_header: str, source_address: str,
                    arrived_at: float) -> AppResponse:
        self.log.append(RequestLogEntry(token_from_path(path), path, host_header,
                                        source_address, arrived_at))
        return _text(200, f"{self.config.name}\n")

    def handle_control(self, method: str, path: str) -> AppResponse:
        if method != "GET" or not path.startswith(CONTROL_PREFIX):
            return _text(404, "not found")
        token = path[len(CONTROL_PREFIX):]
        return _text(200, "true" if self.log.received(token) else "false")


# real sockets

class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    server_version = "proxysleuth"
    sys_version = ""

    def log_message(self, fmt, *args):
        log.debug("%s %s", self.address_string(), fmt % args)

    def _send(self, resp: AppResponse, head: bool = False):
        self.send_response(resp.status)
        for name, value in resp.headers:
            self.send_header(name, value)
        self.send_header("Connection", "close")
        self.end_headers()
        if not head:
            self.wfile.write(resp.body)
        self.close_connection = True

    def do_GET(self):
        self._send(self.server.dispatch(self))

    def do_HEAD(self):
        self._send(self.server.dispatch(self), head=True)


class _AppServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, dispatch):
        super().__init__(address, _Handler)
        self.dispatch = dispatch


@dataclass
class ServerHandle:
    servers: dict[str, ThreadingHTTPServer]
    threads: list[threading.Thread] = field(default_factory=list)
    app: Any = None

    @property
    def ports(self) -> dict[str, int]:
        return {name: srv.server_address[1] for name, srv in self.servers.items()}

    def shutdown(self) -> None:
        for srv in self.servers.values():
            srv.shutdown()
            srv.server_close()
        for thread in self.threads:
            thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def _server_tls(certfile, keyfile) -> ssl.SSLContext:
    if not certfile or not os.path.exists(certfile) or (keyfile and not os.path.exists(keyfile)):
        raise MissingCertificate(f"certificate material not found: {certfile!r}, {keyfile!r}")
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.load_cert_chain(certfile, keyfile)
    return ctx


def _bind(bind: str, port: int, dispatch, tls: ssl.SSLContext | None) -> _AppServer:
    try:
        srv = _AppServer((bind, port), dispatch)
    except OSError as exc:
        raise BindFailure(f"{bind}:{port}: {exc}") from exc
    if tls is not None:
        # handshake happens in the handler thread, not in accept()
        srv.socket = tls.wrap_socket(srv.socket, server_side=True,
                                     do_handshake_on_connect=False)
    return srv


def _start(servers: dict[str, _AppServer], app) -> ServerHandle:
    handle = ServerHandle(servers, app=app)
    for name, srv in servers.items():
        thread = threading.Thread(target=srv.serve_forever, name=f"proxysleuth-{name}",
                                  daemon=True)
        thread.start()
        handle.threads.append(thread)
    return handle


def serve_origin(manifest: Sequence[ObjectSpec], ports: dict[str, int] | None = None, *,
                 certfile: str | None = None, keyfile: str | None = None,
                 bind: str = "0.0.0.0") -> ServerHandle:
    """Serve ``manifest`` over plain HTTP and over TLS.  Port 0 picks a free port."""
    ports = {"http": 80, "https": 443, **(ports or {})}
    tls = _server_tls(certfile, keyfile)
    app = OriginApp(manifest)

    def dispatch_for(logical_port):
        return lambda req: app.handle(req.command, req.path, logical_port)

    servers = {
        "http": _bind(bind, ports["http"], dispatch_for(80), None),
        "https": _bind(bind, ports["https"], dispatch_for(443), tls),
    }
    return _start(servers, app)


def serve_sentinel(config: SentinelConfig, *, certfile: str | None = None,
                   keyfile: str | None = None, bind: str = "0.0.0.0",
                   ports: dict[str, int] | None = None) -> ServerHandle:
    """Data port logs every request; control port answers ``received/{token}``."""
    ports = {"data": config.data_port, "control": config.control_port, **(ports or {})}
    tls = _server_tls(certfile, keyfile)
    app = SentinelApp(config)

    def data(req):
        return app.handle_data(req.command, req.path, req.headers.get("Host", ""),
                               req.client_address[0], time.time() * 1000.0)

    servers = {
        "data": _bind(bind, ports["data"], data, None),
        "control": _bind(bind, ports["control"],
                         lambda req: app.handle_control(req.command, req.path), tls),
    }
    return _start(servers, app)


def make_self_signed_cert(hostnames: Sequence[str], directory: str | os.PathLike,
                          addresses: Sequence[str] = ("127.0.0.1",)) -> tuple[str, str]:
    """Write a self-signed certificate and key for validation runs.

    Clients trust it by passing the certificate file as their trust anchor.
    """
    from cryptography import x509
    from cryptography.hazmat.primitives import hashes, serialization
    from cryptography.hazmat.primitives.asymmetric import ec
    from cryptography.x509.oid import NameOID

    key = ec.generate_private_key(ec.SECP256R1())
    name = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, hostnames[0])])
    sans = [x509.DNSName(h) for h in hostnames]
    sans += [x509.IPAddress(ipaddress.ip_address(a)) for a in addresses]
    now = datetime.datetime.now(datetime.timezone.utc)
    cert = (
        x509.CertificateBuilder()
        .subject_name(name)
        .issuer_name(name)
        .public_key(key.public_key())
        .serial_number(x509.random_serial_number())
        .not_valid_before(now - datetime.timedelta(minutes=5))
        .not_valid_after(now + datetime.timedelta(days=30))
        .add_extension(x509.SubjectAlternativeName(sans), critical=False)
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .sign(key, hashes.SHA256())
    )
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    certfile, keyfile = directory / "cert.pem", directory / "key.pem"
    certfile.write_bytes(cert.public_bytes(serialization.Encoding.PEM))
    keyfile.write_bytes(key.private_bytes(serialization.Encoding.PEM,
                                          serialization.PrivateFormat.PKCS8,
                                          serialization.NoEncryption()))
    return str(certfile), str(keyfile)
