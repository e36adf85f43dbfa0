"""Timed handshakes and timed fetches against pinned endpoints.

The prober never measures anything itself: it asks a transport for
handshake and fetch durations, so the same code runs against real sockets
and against the simulator.
"""
from __future__ import annotations

import enum
import hashlib
import logging
import re
from dataclasses import dataclass

from .errors import (
    ConnectRefused,
    ConnectTimeout,
    PairFailed,
    ResolutionFailed,
    SiteUnmeasurable,
)
from .transport import Header, HttpResponse, Transport

log = logging.getLogger(__name__)

PROBE_PORTS = (80, 443)

_LABEL = re.compile(r"^(?!-)[A-Za-z0-9-]{1,63}(?<!-)$")


def is_valid_hostname(hostname: str) -> bool:
    if not hostname or len(hostname) > 253:
        return False
    return all(_LABEL.match(label) for label in hostname.rstrip(".").split("."))


def digest(body: bytes) -> str:
    return hashlib.sha256(body).hexdigest()


class Outcome(str, enum.Enum):
    OK = "Ok"
    TIMEOUT = "Timeout"
    REFUSED = "Refused"


@dataclass(frozen=True)
class PinnedEndpoint:
    hostname: str
    pinned_address: str
    resolved_at: float


@dataclass(frozen=True)
class RttSample:
    endpoint: PinnedEndpoint
    port: int
    rtt: float | None
    taken_at: float
    outcome: Outcome

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.OK


@dataclass(frozen=True)
class ProbePair:
    rtt80: float
    rtt443: float
    diff: float
    inter_probe_gap: float

    @classmethod
    def from_rtts(cls, rtt80: float, rtt443: float, gap: float = 0.0) -> "ProbePair":
        return cls(rtt80, rtt443, rtt443 - rtt80, gap)


@dataclass(frozen=True)
class FetchSample:
    endpoint: PinnedEndpoint
    port: int
    path: str
    fetch_time: float
    status: int
    body_digest: str
    body_length: int
    headers: tuple[Header, ...] = ()

    def header(self, name: str, default: str | None = None) -> str | None:
        name = name.lower()
        for key, value in self.headers:
            if key.lower() == name:
                return value
        return default


@dataclass
class ProberConfig:
    connect_timeout: float = 10.0
    fetch_timeout: float = 30.0
    max_gap_ms: float = 100.0
    # wait between consecutive pairs of one site
    pair_interval_ms: float = 0.0
    alternate_order: bool = False
    retries: int = 1
    user_agent: str = "proxysleuth/0.1"


class Prober:
    """Session-scoped prober.  Pins, RTT samples and pairs are recorded on
    the instance so a session can later dump its raw provenance."""

    def __init__(self, transport: Transport, config: ProberConfig | None = None):
        self.transport = transport
        self.config = config or ProberConfig()
        self.pins: dict[str, PinnedEndpoint] = {}
        self.rtt_samples: list[RttSample] = []
        self._pairs_taken = 0

    def resolve_and_pin(self, hostname: str) -> PinnedEndpoint:
        if hostname in self.pins:
            return self.pins[hostname]
        if not is_valid_hostname(hostname):
            raise ResolutionFailed(f"invalid hostname {hostname!r}")
        addresses = self.transport.resolve(hostname)
        if not addresses:
            raise ResolutionFailed(hostname)
        endpoint = PinnedEndpoint(hostname, addresses[0], self.transport.now())
        self.pins[hostname] = endpoint
        return endpoint

    def timed_connect(self, endpoint: PinnedEndpoint, port: int) -> RttSample:
        if port not in PROBE_PORTS:
            raise ValueError(f"port must be 80 or 443, got {port}")
        taken_at = self.transport.now()
        try:
            conn, rtt = self.transport.dial(endpoint.pinned_address, port,
                                            self.config.connect_timeout)
        except ConnectTimeout:
            sample = RttSample(endpoint, port, None, taken_at, Outcome.TIMEOUT)
        except ConnectRefused:
            sample = RttSample(endpoint, port, None, taken_at, Outcome.REFUSED)
        else:
            conn.close()
            sample = RttSample(endpoint, port, rtt, taken_at, Outcome.OK)
        self.rtt_samples.append(sample)
        return sample

    def _one_pair(self, endpoint: PinnedEndpoint, reverse: bool) -> ProbePair | None:
        ports = (443, 80) if reverse else (80, 443)
        first = self.timed_connect(endpoint, ports[0])
        if not first.ok:
            return None
        first_done = self.transport.now()
        second = self.timed_connect(endpoint, ports[1])
        if not second.ok:
            return None
        gap = second.taken_at - first_done
        if gap > self.config.max_gap_ms:
            log.debug("pair gap %.1f ms exceeds %.1f ms", gap, self.config.max_gap_ms)
            return None
        by_port = {first.port: first.rtt, second.port: second.rtt}
        return ProbePair.from_rtts(by_port[80], by_port[443], gap)

    def probe_pair(self, endpoint: PinnedEndpoint) -> ProbePair:
        reverse = self.config.alternate_order and self._pairs_taken % 2 == 1
        self._pairs_taken += 1
        for _ in range(1 + self.config.retries):
            pair = self._one_pair(endpoint, reverse)
            if pair is not None:
                return pair
        raise PairFailed(endpoint.hostname)

    def collect_site_probes(self, endpoint: PinnedEndpoint, count: int = 4) -> list[ProbePair]:
        if count < 2:
            raise ValueError("count must be >= 2")
        pairs = []
        for i in range(count):
            if i and self.config.pair_interval_ms:
                self.transport.sleep(self.config.pair_interval_ms)
            try:
                pairs.append(self.probe_pair(endpoint))
            except PairFailed as exc:
                raise SiteUnmeasurable(
                    f"{endpoint.hostname}: {len(pairs)} of {count} valid pairs") from exc
        return pairs

    def request(self, address: str, port: int, path: str, host_header: str, *,
                use_tls: bool, tls_server_name: str | None = None,
                extra_headers: tuple[Header, ...] = ()) -> HttpResponse:
        """One GET on a fresh connection.  Errors propagate to the caller."""
        conn, _ = self.transport.dial(address, port, self.config.connect_timeout)
        headers = [("Host", host_header), ("User-Agent", self.config.user_agent),
                   ("Connection", "close"), *extra_headers]
        try:
            return conn.get(path, headers,
                            tls_server_name=(tls_server_name or host_header) if use_tls else None,
                            timeout=self.config.fetch_timeout)
        finally:
            conn.close()

    def timed_fetch(self, endpoint: PinnedEndpoint, port: int, path: str, use_tls: bool,
                    extra_headers: tuple[Header, ...] = ()) -> FetchSample:
        if use_tls != (port == 443):
            raise ValueError("use_tls must be set exactly when port is 443")
        resp = self.request(endpoint.pinned_address, port, path, endpoint.hostname,
                            use_tls=use_tls, extra_headers=extra_headers)
        return FetchSample(endpoint, port, path, resp.elapsed_ms, resp.status,
                           digest(resp.body), len(resp.body), resp.headers)

    def fetch_page(self, endpoint: PinnedEndpoint, path: str = "/", port: int = 443) -> bytes:
        """Body of one page, for object discovery.  Defaults to 443 so the
        fetch cannot warm a port-80 cache."""
        resp = self.request(endpoint.pinned_address, port, path, endpoint.hostname,
                            use_tls=port == 443)
        return resp.body
