"""Scenario files: topology + proxy + servers + detector settings + ground truth.

Scenarios are YAML.  ``site_groups`` expands into a run of identical
origin hosts hanging off one attachment point, which keeps 20-site
scenarios readable::

    topology:
      client: client
      proxy_placement: gw
      hosts:
        - {name: client, address: 10.0.0.1, role: client}
        - {name: gw, address: 10.0.0.254}
      links:
        - {a: client, b: gw, delay_ms: 5, bandwidth: 1.0e6, jitter_sd_ms: 5}
      site_groups:
        - {prefix: far, count: 20, attach: gw, delay_ms: 45, address_base: 10.1.0.1}
"""
from __future__ import annotations

import copy
import ipaddress
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from ..errors import InvalidTopology, ScenarioNotFound
from ..liveservers import ObjectSpec, default_manifest, load_manifest, parse_manifest
from ..redirect import SentinelConfig
from .clock import ClockMode
from .fabric import Faults, SimNet, build_network
from .proxybox import ProxyboxConfig
from .topology import Host, Link, Topology

SCENARIO_SUFFIXES = (".scn", ".yaml", ".yml")


def bundled_scenario_dir() -> Path:
    return Path(__file__).resolve().parent.parent / "scenarios"


@dataclass
class Scenario:
    name: str
    raw: dict[str, Any]
    topology: Topology
    client: str
    proxy: ProxyboxConfig
    origins: dict[str, list[ObjectSpec]]
    sentinels: list[tuple[str, SentinelConfig]]
    faults: Faults
    session: dict[str, Any] = field(default_factory=dict)
    expect: dict[str, Any] | None = None
    seeds: int = 100
    source: str | None = None

    def build(self, seed: int, clock_mode: ClockMode = ClockMode.VIRTUAL) -> SimNet:
        return build_network(self.topology, self.proxy, seed, origins=self.origins,
                             sentinels=self.sentinels, faults=self.faults,
                             clock_mode=clock_mode)

    def origin_hostnames(self) -> list[str]:
        by_address = {h.address: h.name for h in self.topology.hosts}
        names = []
        for hostname, addrs in self.topology.host_table.items():
            if by_address.get(addrs[0]) in self.origins:
                names.append(hostname)
        return names

    def sentinel(self, name: str) -> SentinelConfig:
        for _, cfg in self.sentinels:
            if cfg.name == name:
                return cfg
        raise KeyError(name)

    def with_overrides(self, **changes: Any) -> "Scenario":
        """A new scenario with top-level raw sections deep-merged, e.g.
        ``with_overrides(proxy={"split_handshake": False})``."""
        raw = copy.deepcopy(self.raw)
        _merge(raw, changes)
        return scenario_from_dict(raw, self.source)


def _merge(dst: dict, src: dict) -> None:
    for key, value in src.items():
        if isinstance(value, dict) and isinstance(dst.get(key), dict):
            _merge(dst[key], value)
        else:
            dst[key] = copy.deepcopy(value)


def _link(entry: dict, a: str | None = None, b: str | None = None) -> Link:
    return Link(a or entry["a"], b or entry["b"], float(entry.get("delay_ms", 0.0)),
                float(entry.get("bandwidth", 1.0e6)), float(entry.get("jitter_sd_ms", 0.0)))


def _manifest(entry: Any, base_dir: Path | None) -> list[ObjectSpec]:
    if entry is None or entry == "default":
        return default_manifest()
    if isinstance(entry, str):
        path = Path(entry)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_manifest(path)
    return parse_manifest(entry)


def scenario_from_dict(raw: dict[str, Any], source: str | None = None) -> Scenario:
    base_dir = Path(source).parent if source else None
    topo = raw.get("topology") or {}
    hosts = [Host(h["name"], h["address"], h.get("role", "router")) for h in topo.get("hosts", [])]
    links = [_link(entry) for entry in topo.get("links", [])]
    host_table: dict[str, list[str]] = {}
    origins: dict[str, list[ObjectSpec]] = {}
    domain_default = topo.get("domain", "sim")

    for group in topo.get("site_groups", []):
        base = ipaddress.ip_address(group["address_base"])
        manifest = _manifest(group.get("manifest"), base_dir)
        domain = group.get("domain", domain_default)
        for i in range(int(group["count"])):
            name = f"{group['prefix']}-{i:02d}"
            hosts.append(Host(name, str(base + i), "origin"))
            links.append(_link(group, group["attach"], name))
            host_table[f"{name}.{domain}"] = [str(base + i)]
            origins[name] = manifest

    for name, spec in (raw.get("origins") or {}).items():
        spec = spec or {}
        origins[name] = _manifest(spec.get("manifest"), base_dir)
        host_table.setdefault(spec.get("hostname", f"{name}.{domain_default}"), [])
        address = next((h.address for h in hosts if h.name == name), None)
        if address is None:
            raise InvalidTopology(f"origin {name} is not a topology host")
        host_table[spec.get("hostname", f"{name}.{domain_default}")].append(address)

    sentinels = []
    for spec in raw.get("sentinels") or []:
        address = next((h.address for h in hosts if h.name == spec["host"]), None)
        if address is None:
            raise InvalidTopology(f"sentinel {spec['name']} is not a topology host")
        cfg = SentinelConfig(spec["name"], spec["hostname"], address,
                             int(spec.get("control_port", 443)), int(spec.get("data_port", 80)))
        sentinels.append((spec["host"], cfg))
        host_table[cfg.hostname] = [address]

    for name, addrs in (topo.get("host_table") or {}).items():
        host_table[name] = [addrs] if isinstance(addrs, str) else list(addrs)

    topology = Topology(tuple(hosts), tuple(links), host_table, topo.get("proxy_placement"))
    client = topo.get("client", "client")
    if client not in {h.name for h in hosts}:
        raise InvalidTopology(f"client host {client!r} not in topology")
    return Scenario(
        name=raw.get("name") or (Path(source).stem if source else "scenario"),
        raw=raw,
        topology=topology,
        client=client,
        proxy=ProxyboxConfig.from_dict(raw.get("proxy")),
        origins=origins,
        sentinels=sentinels,
        faults=Faults.from_dict(raw.get("faults")),
        session=dict(raw.get("session") or {}),
        expect=raw.get("expect"),
        seeds=int(raw.get("seeds", 100)),
        source=source,
    )


def load_scenario(path: str | os.PathLike) -> Scenario:
    path = Path(path)
    if not path.exists():
        candidate = bundled_scenario_dir() / path.name
        if path.parent == Path(".") and candidate.exists():
            path = candidate
        else:
            raise ScenarioNotFound(str(path))
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return scenario_from_dict(raw, str(path))


def list_scenarios(directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ScenarioNotFound(str(directory))
    return sorted(p for p in directory.iterdir() if p.suffix in SCENARIO_SUFFIXES)
