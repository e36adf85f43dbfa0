"""Transport contract used by the prober, and the real-network implementation.

A transport resolves names, dials stream connections and reports how long
the handshake took.  Connections issue a single HTTP GET and report the time
from request write to the last body byte.  The simulator implements the same
contract in :mod:`proxysleuth.simnet.fabric`.
"""
from __future__ import annotations

import http.client
import socket
import ssl
import time
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from .errors import ConnectRefused, ConnectTimeout, FetchTimeout, TlsFailure

Header = tuple[str, str]


@dataclass(frozen=True)
class HttpResponse:
    status: int
    headers: tuple[Header, ...]
    body: bytes
    elapsed_ms: float

    def header(self, name: str, default: str | None = None) -> str | None:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return default


class Connection(Protocol):
    def get(self, path: str, headers: Sequence[Header], *,
            tls_server_name: str | None = None,
            timeout: float = 30.0) -> HttpResponse: ...

    def close(self) -> None: ...


class Transport(Protocol):
    def resolve(self, hostname: str) -> list[str]: ...

    def dial(self, address: str, port: int,
             timeout: float = 10.0) -> tuple[Connection, float]: ...

    def now(self) -> float:
        """Current time in milliseconds."""
        ...

    def sleep(self, ms: float) -> None: ...


class SocketConnection:
    def __init__(self, sock: socket.socket, address: str, port: int,
                 ssl_context: ssl.SSLContext | None):
        self._sock = sock
        self._address = address
        self._port = port
        self._ssl_context = ssl_context

    def get(self, path, headers, *, tls_server_name=None, timeout=30.0):
        sock = self._sock
        sock.settimeout(timeout)
        if tls_server_name is not None:
            ctx = self._ssl_context or ssl.create_default_context()
            try:
                sock = ctx.wrap_socket(sock, server_hostname=tls_server_name)
            except ssl.SSLError as exc:
                raise TlsFailure(str(exc)) from exc
            except (socket.timeout, TimeoutError) as exc:
                raise FetchTimeout(f"TLS handshake with {self._address}") from exc
            self._sock = sock

        conn = http.client.HTTPConnection(self._address, self._port, timeout=timeout)
        conn.sock = sock
        try:
            conn.putrequest("GET", path, skip_host=True, skip_accept_encoding=True)
            for name, value in headers:
                conn.putheader(name, value)
            start = time.perf_counter()
            conn.endheaders()
            resp = conn.getresponse()
            # read() undoes chunked framing but leaves Content-Encoding alone
            body = resp.read()
            elapsed = (time.perf_counter() - start) * 1000.0
        except (socket.timeout, TimeoutError) as exc:
            raise FetchTimeout(f"GET {path} from {self._address}:{self._port}") from exc
        except ssl.SSLError as exc:
            raise TlsFailure(str(exc)) from exc
        return HttpResponse(resp.status, tuple(resp.getheaders()), body, elapsed)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class SocketTransport:
    """OS stream sockets.

    ``host_table`` short-circuits DNS for names it contains; ``port_map``
    translates the logical ports 80/443 to the ports actually dialed, which
    lets the detectors run against local test servers.
    """

    def __init__(self, host_table: Mapping[str, str | Sequence[str]] | None = None,
                 port_map: Mapping[int, int] | None = None,
                 ssl_context: ssl.SSLContext | None = None):
        self.host_table = dict(host_table or {})
        self.port_map = dict(port_map or {})
        self.ssl_context = ssl_context

    def resolve(self, hostname):
        if hostname in self.host_table:
            entry = self.host_table[hostname]
            return [entry] if isinstance(entry, str) else list(entry)
        try:
            infos = socket.getaddrinfo(hostname, None, socket.AF_INET, socket.SOCK_STREAM)
        except socket.gaierror:
            return []
        addresses = []
        for info in infos:
            addr = info[4][0]
            if addr not in addresses:
                addresses.append(addr)
        return addresses

    def dial(self, address, port, timeout=10.0):
        sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        sock.settimeout(timeout)
        start = time.perf_counter()
        try:
            sock.connect((address, self.port_map.get(port, port)))
        except (socket.timeout, TimeoutError) as exc:
            sock.close()
            raise ConnectTimeout(f"{address}:{port}") from exc
        except OSError as exc:
            sock.close()
            raise ConnectRefused(f"{address}:{port}: {exc}") from exc
        elapsed = (time.perf_counter() - start) * 1000.0
        return SocketConnection(sock, address, self.port_map.get(port, port),
                                self.ssl_context), elapsed

    def now(self):
        return time.time() * 1000.0

    def sleep(self, ms):
        if ms > 0:
            time.sleep(ms / 1000.0)


def make_ssl_context(trust_anchor: str | None = None) -> ssl.SSLContext:
    """Client TLS context; ``trust_anchor`` adds a CA file (e.g. a self-signed origin cert)."""
    ctx = ssl.create_default_context()
    if trust_anchor:
        ctx.load_verify_locations(cafile=trust_anchor)
    return ctx
