"""The simulated network fabric and its prober transport.

Durations are analytic: a round trip costs twice the one-way delay sum of
the links crossed, plus one seeded Gaussian jitter draw per link
traversal; a body costs its size over the bottleneck bandwidth.  With the
proxy on the path a cache miss streams upstream and downstream at the
same time, so the slower of the two transfers dominates.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Sequence

from ..errors import ConnectRefused, ConnectTimeout, FetchTimeout, InvalidTopology, Unreachable
from ..liveservers import AppResponse, ObjectSpec, OriginApp, SentinelApp
from ..redirect import SentinelConfig
from ..transport import HttpResponse
from .clock import ClockMode, SimClock
from .proxybox import FlowResult, Proxybox, ProxyboxConfig, SimRequest
from .topology import Path, Topology

# keeps every successful duration strictly positive after jitter truncation
MIN_DURATION_MS = 1e-3


def transfer_ms(size: int, bandwidth_bytes_per_s: float) -> float:
    return 1000.0 * size / bandwidth_bytes_per_s


@dataclass
class Faults:
    # host name -> number of initial dials to that host that time out
    drop_first_connections: dict[str, int] = field(default_factory=dict)
    # host name -> ports that actively refuse
    refuse_ports: dict[str, tuple[int, ...]] = field(default_factory=dict)
    # proxy drops requests whose Host header does not resolve to the destination
    drop_mismatch: bool = False

    @classmethod
    def from_dict(cls, data: dict | None) -> "Faults":
        data = dict(data or {})
        refuse = {h: tuple(int(p) for p in ports)
                  for h, ports in (data.pop("refuse_ports", {}) or {}).items()}
        drops = {h: int(n) for h, n in (data.pop("drop_first_connections", {}) or {}).items()}
        return cls(drop_first_connections=drops, refuse_ports=refuse, **data)


class SimNet:
    """A fabric hosting origins and sentinels behind an optional proxy.

    Build it with :func:`build_network`; obtain transports for client hosts
    with :meth:`transport`.
    """

    def __init__(self, topology: Topology, proxy: ProxyboxConfig, seed: int,
                 origins: dict[str, Sequence[ObjectSpec]] | None = None,
                 sentinels: Sequence[tuple[str, SentinelConfig]] = (),
                 faults: Faults | None = None,
                 clock: SimClock | None = None,
                 connect_timeout_ms: float = 10_000.0,
                 fetch_timeout_ms: float = 30_000.0):
        self.topology = topology
        self.proxy_config = proxy
        self.seed = seed
        self.faults = faults or Faults()
        self.clock = clock or SimClock()
        self.connect_timeout_ms = connect_timeout_ms
        self.fetch_timeout_ms = fetch_timeout_ms
        self.rng = random.Random(f"simnet:{seed}:{proxy.jitter_seed}")
        self.events: list[tuple] = []
        self.origins = {name: OriginApp(manifest) for name, manifest in (origins or {}).items()}
        self.sentinels = {name: SentinelApp(cfg) for name, cfg in sentinels}
        self._drops_left = dict(self.faults.drop_first_connections)
        self.proxy = None
        if topology.proxy_placement is not None:
            self.proxy = Proxybox(proxy, self._deliver_from_proxy, topology.resolve,
                                  drop_mismatch=self.faults.drop_mismatch)

    # timing

    def _jitter(self, path: Path, traversals: int = 2) -> float:
        total = 0.0
        for link in path.links:
            if link.jitter_sd_ms:
                for _ in range(traversals):
                    total += self.rng.gauss(0.0, link.jitter_sd_ms)
        return total

    def round_trip(self, path: Path) -> float:
        return max(2.0 * path.one_way_delay + self._jitter(path), MIN_DURATION_MS)

    def _log(self, *event) -> None:
        self.events.append((round(self.clock.now, 9), *event))

    # topology helpers

    def _intercepted(self, client: str, path: Path, port: int, bypass: bool) -> bool:
        return (not bypass and self.proxy is not None and self.proxy.intercepts(port)
                and self.topology.proxy_on_path(path))

    def _listens(self, host: str, port: int) -> bool:
        if port in self.faults.refuse_ports.get(host, ()):
            return False
        if host in self.origins:
            return port in (80, 443)
        if host in self.sentinels:
            cfg = self.sentinels[host].config
            return port in (cfg.data_port, cfg.control_port)
        return False

    # handshakes

    def sim_handshake(self, client: str, destination: str, port: int,
                      bypass_proxy: bool = False, timeout_ms: float | None = None) -> float:
        """Duration of one transport handshake, advancing the clock by it."""
        timeout_ms = self.connect_timeout_ms if timeout_ms is None else timeout_ms
        try:
            host = self.topology.host_at(destination).name
            path = self.topology.path(client, host)
        except Unreachable:
            self.clock.advance(timeout_ms)
            self._log("dial", client, destination, port, "Timeout")
            raise
        if self._drops_left.get(host, 0) > 0:
            self._drops_left[host] -= 1
            self.clock.advance(timeout_ms)
            self._log("dial", client, destination, port, "Timeout")
            raise ConnectTimeout(f"{destination}:{port} (injected drop)")

        if self._intercepted(client, path, port, bypass_proxy) and self.proxy_config.split_handshake:
            to_proxy, _ = path.split_at(self.topology.proxy_placement)
            duration = self.round_trip(to_proxy)
            responder = "proxy"
        else:
            duration = self.round_trip(path)
            responder = "origin"
            if not self._listens(host, port):
                self.clock.advance(duration)
                self._log("dial", client, destination, port, "Refused", duration)
                raise ConnectRefused(f"{destination}:{port}")
        self.clock.advance(duration)
        self._log("dial", client, destination, port, "Ok", duration, responder)
        return duration

    # request delivery

    def _serve(self, host: str, req: SimRequest, source: str) -> AppResponse | None:
        if host in self.origins:
            return self.origins[host].handle(req.method, req.path, req.port)
        if host in self.sentinels:
            app = self.sentinels[host]
            if req.port == app.config.data_port:
                return app.handle_data(req.method, req.path, req.header("Host") or "",
                                       source, self.clock.now)
            if req.port == app.config.control_port:
                return app.handle_control(req.method, req.path)
        return None

    def _deliver_from_proxy(self, address: str, req: SimRequest) -> AppResponse | None:
        try:
            host = self.topology.host_at(address).name
        except Unreachable:
            return None
        if not self._listens(host, req.port):
            return None
        proxy_addr = self.topology.host(self.topology.proxy_placement).address
        return self._serve(host, req, proxy_addr)

    def sim_get(self, client: str, destination: str, port: int, path: str,
                headers: Sequence[tuple[str, str]], bypass_proxy: bool = False,
                timeout_ms: float | None = None) -> HttpResponse:
        """One GET on an established connection; advances the clock by the
        time from request write to the last body byte."""
        timeout_ms = self.fetch_timeout_ms if timeout_ms is None else timeout_ms
        host = self.topology.host_at(destination).name
        full = self.topology.path(client, host)
        req = SimRequest("GET", path, tuple(headers), destination, port)

        if self._intercepted(client, full, port, bypass_proxy):
            to_proxy, _ = full.split_at(self.topology.proxy_placement)
            flow = self.proxy.handle_flow(req, self.clock.now)
            if flow.response is None:
                self.clock.advance(timeout_ms)
                self._log("get", client, destination, port, path, "Dropped")
                raise FetchTimeout(f"GET {path} via proxy (dropped)")
            elapsed = self._proxied_time(to_proxy, flow)
            resp = flow.response
            provenance = ",".join(s.value for s in flow.provenance)
        else:
            resp = self._serve(host, req, self.topology.host(client).address)
            if resp is None:
                self.clock.advance(timeout_ms)
                self._log("get", client, destination, port, path, "NoService")
                raise FetchTimeout(f"GET {path}: nothing serving {destination}:{port}")
            elapsed = self.round_trip(full) + transfer_ms(len(resp.body), full.bottleneck)
            provenance = ""
        elapsed = max(elapsed, MIN_DURATION_MS)
        self.clock.advance(elapsed)
        self._log("get", client, destination, port, path, resp.status, len(resp.body),
                  elapsed, provenance)
        return HttpResponse(resp.status, resp.headers, resp.body, elapsed)

    def _proxied_time(self, to_proxy: Path, flow: FlowResult) -> float:
        out_bytes = len(flow.response.body)
        elapsed = self.round_trip(to_proxy)
        downstream = transfer_ms(out_bytes, to_proxy.bottleneck)
        if flow.upstream_address is None:
            return elapsed + downstream
        upstream_host = self.topology.host_at(flow.upstream_address).name
        leg = self.topology.path(self.topology.proxy_placement, upstream_host)
        elapsed += self.round_trip(leg)
        return elapsed + max(transfer_ms(flow.upstream_bytes, leg.bottleneck), downstream)

    # transports

    def transport(self, client: str, bypass_proxy: bool = False) -> "SimTransport":
        if client not in {h.name for h in self.topology.hosts}:
            raise KeyError(client)
        return SimTransport(self, client, bypass_proxy)


class SimConnection:
    def __init__(self, net: SimNet, client: str, address: str, port: int, bypass: bool):
        self.net, self.client, self.address, self.port, self.bypass = net, client, address, port, bypass
        self.closed = False

    def get(self, path, headers, *, tls_server_name=None, timeout=30.0):
        if self.closed:
            raise RuntimeError("connection closed")
        return self.net.sim_get(self.client, self.address, self.port, path, headers,
                                self.bypass, timeout * 1000.0)

    def close(self):
        self.closed = True


class SimTransport:
    """Prober transport for one client host.  ``bypass_proxy`` gives the
    proxy-free baseline vantage on the same path."""

    def __init__(self, net: SimNet, client: str, bypass_proxy: bool = False):
        self.net = net
        self.client = client
        self.bypass_proxy = bypass_proxy

    def resolve(self, hostname):
        return list(self.net.topology.resolve(hostname))

    def dial(self, address, port, timeout=10.0):
        try:
            duration = self.net.sim_handshake(self.client, address, port, self.bypass_proxy,
                                              timeout * 1000.0)
        except Unreachable as exc:
            raise ConnectTimeout(str(exc)) from exc
        return SimConnection(self.net, self.client, address, port, self.bypass_proxy), duration

    def now(self):
        return self.net.clock.now

    def sleep(self, ms):
        if ms > 0:
            self.net.clock.advance(ms)


def build_network(topology: Topology, proxy: ProxyboxConfig | None = None, seed: int = 0, *,
                  origins: dict[str, Sequence[ObjectSpec]] | None = None,
                  sentinels: Sequence[tuple[str, SentinelConfig]] = (),
                  faults: Faults | None = None,
                  clock_mode: ClockMode = ClockMode.VIRTUAL) -> SimNet:
    """Identical arguments give identical runs in virtual-clock mode."""
    topology.validate()
    known = {h.name for h in topology.hosts}
    for name in list(origins or {}) + [h for h, _ in sentinels]:
        if name not in known:
            raise InvalidTopology(f"server placed on unknown host {name}")
    return SimNet(topology, proxy or ProxyboxConfig(), seed, origins, sentinels, faults,
                  SimClock(clock_mode))
