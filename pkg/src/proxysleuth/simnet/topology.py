from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx

from ..errors import InvalidTopology, Unreachable


@dataclass(frozen=True)
class Host:
    name: str
    address: str
    role: str = "router"


@dataclass(frozen=True)
class Link:
    a: str
    b: str
    one_way_delay_ms: float
    bandwidth_bytes_per_s: float
    jitter_sd_ms: float = 0.0


@dataclass(frozen=True)
class Path:
    hosts: tuple[str, ...]
    links: tuple[Link, ...]

    @property
    def one_way_delay(self) -> float:
        return sum(link.one_way_delay_ms for link in self.links)

    @property
    def bottleneck(self) -> float:
        return min((link.bandwidth_bytes_per_s for link in self.links), default=float("inf"))

    def split_at(self, host: str) -> tuple["Path", "Path"]:
        i = self.hosts.index(host)
        return (Path(self.hosts[:i + 1], self.links[:i]),
                Path(self.hosts[i:], self.links[i:]))


@dataclass
class Topology:
    hosts: tuple[Host, ...]
    links: tuple[Link, ...]
    host_table: dict[str, tuple[str, ...]] = field(default_factory=dict)
    proxy_placement: str | None = None

    def __post_init__(self):
        self.hosts = tuple(self.hosts)
        self.links = tuple(self.links)
        self.host_table = {name: (addrs,) if isinstance(addrs, str) else tuple(addrs)
                           for name, addrs in self.host_table.items()}
        self.validate()
        self._by_name = {h.name: h for h in self.hosts}
        self._by_address = {h.address: h for h in self.hosts}
        self._paths: dict[tuple[str, str], Path] = {}
        self._graph = nx.Graph()
        self._graph.add_nodes_from(h.name for h in self.hosts)
        for link in self.links:
            self._graph.add_edge(link.a, link.b, weight=link.one_way_delay_ms, link=link)

    def validate(self) -> None:
        names = [h.name for h in self.hosts]
        if len(set(names)) != len(names):
            raise InvalidTopology("duplicate host names")
        addresses = [h.address for h in self.hosts]
        if len(set(addresses)) != len(addresses):
            raise InvalidTopology("duplicate host addresses")
        known = set(names)
        graph = nx.Graph()
        graph.add_nodes_from(known)
        for link in self.links:
            if link.a not in known or link.b not in known:
                raise InvalidTopology(f"link {link.a}-{link.b} references an unknown host")
            if link.a == link.b:
                raise InvalidTopology(f"self-loop on {link.a}")
            if link.one_way_delay_ms < 0:
                raise InvalidTopology(f"negative delay on {link.a}-{link.b}")
            if not link.bandwidth_bytes_per_s > 0:
                raise InvalidTopology(f"non-positive bandwidth on {link.a}-{link.b}")
            if link.jitter_sd_ms < 0:
                raise InvalidTopology(f"negative jitter on {link.a}-{link.b}")
            graph.add_edge(link.a, link.b)
        if not known:
            raise InvalidTopology("no hosts")
        if not nx.is_connected(graph):
            raise InvalidTopology("host graph is disconnected")
        if self.proxy_placement is not None and self.proxy_placement not in known:
            raise InvalidTopology(f"proxy placed on unknown host {self.proxy_placement}")
        addr_set = set(addresses)
        for name, addrs in self.host_table.items():
            if not addrs:
                raise InvalidTopology(f"host table entry {name} has no address")
            for addr in addrs:
                if addr not in addr_set:
                    raise InvalidTopology(f"host table maps {name} to unknown {addr}")

    def host(self, name: str) -> Host:
        return self._by_name[name]

    def host_at(self, address: str) -> Host:
        try:
            return self._by_address[address]
        except KeyError:
            raise Unreachable(address) from None

    def resolve(self, hostname: str) -> tuple[str, ...]:
        return self.host_table.get(hostname, ())

    def path(self, src: str, dst: str) -> Path:
        """Minimum-delay path; ties broken by networkx's deterministic order."""
        key = (src, dst)
        if key not in self._paths:
            self._paths[key] = self._shortest(src, dst)
        return self._paths[key]

    def _shortest(self, src: str, dst: str) -> Path:
        if src == dst:
            return Path((src,), ())
        try:
            hosts = nx.shortest_path(self._graph, src, dst, weight="weight")
        except nx.NetworkXNoPath:
            raise Unreachable(f"{src} -> {dst}") from None
        links = tuple(self._graph.edges[u, v]["link"] for u, v in zip(hosts, hosts[1:]))
        return Path(tuple(hosts), links)

    def proxy_on_path(self, path: Path) -> bool:
        return self.proxy_placement is not None and self.proxy_placement in path.hosts[1:-1]
